//! Binary model checkpoints.
//!
//! Layout: the 4-byte magic `PMN1`, a little-endian u64 manifest byte
//! length, a JSON manifest `{config, step, tensors: [{name, shape,
//! offset}]}`, then the payload of concatenated little-endian 64-bit
//! floats. Offsets count f64 elements into the payload and must tile it
//! exactly in manifest order; loading a saved checkpoint reproduces every
//! parameter bit for bit.

use crate::autodiff::{ParamSet, Tensor};
use crate::config::Config;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PMN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("BAD_MAGIC: not a checkpoint file (found {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("MANIFEST_ERROR: {0}")]
    Manifest(String),
    #[error("PAYLOAD_MISMATCH: {0}")]
    Payload(String),
    #[error("CONFIG_MISMATCH: checkpoint and supplied config disagree on {0}")]
    ConfigMismatch(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: Config,
    step: usize,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint: the training configuration, the optimizer step it
/// was saved at, and every named parameter in original definition order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub step: usize,
    pub params: ParamSet,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &Config,
    step: usize,
    params: &ParamSet,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, value) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            offset,
        });
        offset += value.len();
    }
    let manifest = Manifest {
        config: config.clone(),
        step,
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut bytes = Vec::with_capacity(4 + 8 + json.len() + offset * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, value) in params.iter() {
        for v in value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: bytes.get(..4).unwrap_or(&bytes).to_vec(),
        });
    }
    let header_len = 12;
    let json_len = bytes
        .get(4..header_len)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        .ok_or_else(|| CheckpointError::Manifest("truncated length field".to_string()))?;
    let json = bytes
        .get(header_len..header_len + json_len)
        .ok_or_else(|| CheckpointError::Manifest("truncated manifest".to_string()))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let payload = &bytes[header_len + json_len..];
    if payload.len() % 8 != 0 {
        return Err(CheckpointError::Payload(format!(
            "payload length {} is not a multiple of 8",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut params = ParamSet::new();
    let mut expected = 0;
    for entry in &manifest.tensors {
        if entry.offset != expected {
            return Err(CheckpointError::Payload(format!(
                "tensor {:?} at offset {}, expected {} (offsets must tile the payload)",
                entry.name, entry.offset, expected
            )));
        }
        let count: usize = entry.shape.iter().product();
        let data = values
            .get(entry.offset..entry.offset + count)
            .ok_or_else(|| {
                CheckpointError::Payload(format!(
                    "tensor {:?} needs {} values past offset {}, payload has {}",
                    entry.name,
                    count,
                    entry.offset,
                    values.len()
                ))
            })?;
        expected += count;
        let tensor = Tensor::from_vec(&entry.shape, data.to_vec())
            .map_err(|e| CheckpointError::Payload(e.to_string()))?;
        params
            .define(&entry.name, tensor)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    }
    if expected != values.len() {
        return Err(CheckpointError::Payload(format!(
            "payload holds {} values, manifest accounts for {expected}",
            values.len()
        )));
    }
    Ok(Checkpoint {
        config: manifest.config,
        step: manifest.step,
        params,
    })
}

/// Fails with `CONFIG_MISMATCH` when an explicitly supplied config
/// disagrees with a checkpoint on any architecture-determining key.
pub fn ensure_compatible(checkpoint: &Config, supplied: &Config) -> Result<(), CheckpointError> {
    let mismatches = checkpoint.architecture_mismatches(supplied);
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CheckpointError::ConfigMismatch(mismatches.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tricky_params() -> ParamSet {
        let mut params = ParamSet::new();
        params
            .define(
                "a.w",
                Tensor::from_vec(&[2, 3], vec![-0.0, 1e-300, std::f64::consts::PI, 1.0 / 3.0, -1e300, 5e-324])
                    .unwrap(),
            )
            .unwrap();
        params
            .define("b.bias", Tensor::from_vec(&[2], vec![0.1 + 0.2, -7.25]).unwrap())
            .unwrap();
        params
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pmn");
        let params = tricky_params();
        let mut config = Config::default();
        config.hidden = 64;
        config.seed = 9;
        save_checkpoint(&path, &config, 1234, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 1234);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.params.len(), params.len());
        for ((na, va), (nb, vb)) in params.iter().zip(loaded.params.iter()) {
            assert_eq!(na, nb, "definition order must be preserved");
            assert_eq!(va.shape(), vb.shape());
            for (x, y) in va.data().iter().zip(vb.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{na}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not-a-checkpoint");
        std::fs::write(&path, b"XXXX000000000000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic { .. }), "got {err:?}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pmn");
        save_checkpoint(&path, &Config::default(), 1, &tricky_params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, CheckpointError::Payload(_)), "got {err:?}");
    }

    #[test]
    fn manifest_offsets_must_tile_the_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pmn");
        let config_json = serde_json::to_string(&Config::default()).unwrap();
        let manifest = format!(
            "{{\"config\":{config_json},\"step\":0,\"tensors\":[{{\"name\":\"a\",\"shape\":[2],\"offset\":1}}]}}"
        );
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        match err {
            CheckpointError::Payload(detail) => assert!(detail.contains("tile"), "{detail}"),
            other => panic!("expected Payload, got {other:?}"),
        }
    }

    #[test]
    fn config_compatibility_names_the_offending_keys() {
        let a = Config::default();
        let mut b = Config::default();
        b.hidden = 64;
        b.layers = 3;
        let err = ensure_compatible(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("CONFIG_MISMATCH"), "{msg}");
        assert!(msg.contains("hidden") && msg.contains("layers"), "{msg}");
        // Non-architecture keys are free to differ.
        let mut c = Config::default();
        c.lr = 0.5;
        c.epochs = 1;
        assert!(ensure_compatible(&a, &c).is_ok());
    }
}
