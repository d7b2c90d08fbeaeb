//! Trajectory containers, JSON Lines file I/O, dataset windowing, and
//! batch assembly.
//!
//! A trajectory file is JSON Lines: line 1 is a header object
//! `{"schema":"pmn-traj/1","frame_rate":25,"label":...}` and every
//! following line is one frame `{"coord":[[x,y,z] x16], "lie":..?,
//! "kp2d":..?, "root":..?}`. Numbers use shortest round-trip decimal
//! formatting, so write-then-read reproduces every float bit-exactly.
//!
//! `coord` is always root-relative; the optional `root` field carries the
//! absolute root position and is only used for camera projection.

use crate::autodiff::Tensor;
use crate::pose::{COORD_DIMS, LIE_DIMS};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Schema tag of the trajectory file format.
pub const SCHEMA: &str = "pmn-traj/1";
/// Joint count fixed by the file format.
pub const JOINTS: usize = 16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("PARSE_ERROR: line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("SCHEMA_VERSION_MISMATCH: found {found:?}, expected {SCHEMA:?}")]
    SchemaVersion { found: String },
    #[error("MISSING_FIELD: {0}")]
    MissingField(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

/// One time step of a trajectory. `coord` is root-relative; `lie` is the
/// matching joint-twist representation when known; `kp2d` holds normalized
/// image keypoints in [-1, 1]; `root` is the absolute root position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub coord: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lie: Option<Vec<[f64; 6]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp2d: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    frame_rate: f64,
    label: String,
}

impl Trajectory {
    pub fn new(label: impl Into<String>, frame_rate: f64) -> Self {
        Trajectory {
            label: label.into(),
            frame_rate,
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks joint counts and uniform presence of the optional fields.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, frame) in self.frames.iter().enumerate() {
            validate_frame(frame, i, i + 2)?;
            let first = &self.frames[0];
            if frame.lie.is_some() != first.lie.is_some()
                || frame.kp2d.is_some() != first.kp2d.is_some()
                || frame.root.is_some() != first.root.is_some()
            {
                return Err(DataError::Parse {
                    line: i + 2,
                    detail: format!("frame {i}: optional fields differ from frame 0"),
                });
            }
        }
        Ok(())
    }
}

fn validate_frame(frame: &Frame, index: usize, line: usize) -> Result<(), DataError> {
    let bad = |what: &str, n: usize| DataError::Parse {
        line,
        detail: format!("frame {index}: {what} has {n} joints, expected {JOINTS}"),
    };
    if frame.coord.len() != JOINTS {
        return Err(bad("coord", frame.coord.len()));
    }
    if let Some(lie) = &frame.lie {
        if lie.len() != JOINTS {
            return Err(bad("lie", lie.len()));
        }
    }
    if let Some(kp) = &frame.kp2d {
        if kp.len() != JOINTS {
            return Err(bad("kp2d", kp.len()));
        }
    }
    Ok(())
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: SCHEMA.to_string(),
        frame_rate: traj.frame_rate,
        label: traj.label.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for frame in &traj.frames {
        writeln!(out, "{}", serde_json::to_string(frame).expect("frame serializes"))?;
    }
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DataError::Parse {
            line: 1,
            detail: "empty file, expected header".to_string(),
        })??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| DataError::Parse {
        line: 1,
        detail: format!("bad header: {e}"),
    })?;
    if header.schema != SCHEMA {
        return Err(DataError::SchemaVersion { found: header.schema });
    }
    let mut traj = Trajectory::new(header.label, header.frame_rate);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            detail: format!("bad frame: {e}"),
        })?;
        validate_frame(&frame, traj.frames.len(), line_no)?;
        traj.frames.push(frame);
    }
    traj.validate()?;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One training/evaluation sample: `past + future` contiguous frames of
/// one source trajectory starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub traj: usize,
    pub start: usize,
    pub split: Split,
}

/// Windows tiled over a trajectory set, split train/test at trajectory
/// granularity.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    /// One human-readable note per skipped trajectory.
    pub warnings: Vec<String>,
}

/// Tiles windows of `past + future` frames with the given stride and
/// splits them by trajectory. Trajectories shorter than one window are
/// skipped with a warning. Deterministic in `seed`; the trajectory-level
/// split depends only on the trajectory count, so two calls with the same
/// seed but different window spans agree on every trajectory's split.
pub fn make_windows(
    trajs: &[Trajectory],
    past: usize,
    future: usize,
    stride: usize,
    train_ratio: f64,
    seed: u64,
) -> WindowSet {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let needed = past + future;
    let mut set = WindowSet::default();
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = if order.len() <= 1 {
        order.len()
    } else {
        ((order.len() as f64 * train_ratio).round() as usize).clamp(1, order.len())
    };
    for (rank, &ti) in order.iter().enumerate() {
        let split = if rank < n_train { Split::Train } else { Split::Test };
        let len = trajs[ti].len();
        if len < needed {
            set.warnings.push(format!(
                "TOO_SHORT: trajectory {ti} ({:?}) has {len} frames, need {needed}; skipped",
                trajs[ti].label
            ));
            continue;
        }
        let count = (len - needed) / stride + 1;
        for w in 0..count {
            let window = Window {
                traj: ti,
                start: w * stride,
                split,
            };
            match split {
                Split::Train => set.train.push(window),
                Split::Test => set.test.push(window),
            }
        }
    }
    // Stable iteration order for downstream consumers regardless of the
    // shuffle that chose the split.
    set.train.sort_by_key(|w| (w.traj, w.start));
    set.test.sort_by_key(|w| (w.traj, w.start));
    set
}

/// Time-major tensors for one batch of windows: all batch rows for step 0,
/// then step 1, and so on.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(past * size, JOINTS * 2)` normalized keypoints.
    pub kp2d: Tensor,
    /// `(past * size, JOINTS * 9)` ground-truth dual frames.
    pub gt_past: Tensor,
    /// `(future * size, JOINTS * 9)` ground-truth dual frames.
    pub gt_future: Tensor,
    pub size: usize,
}

/// Gathers the windows into time-major batch tensors. Requires `kp2d` and
/// `lie` on every frame; `future` may extend past the windows' nominal
/// future span as long as the source trajectories have the frames.
pub fn assemble_batch(
    trajs: &[Trajectory],
    windows: &[Window],
    past: usize,
    future: usize,
) -> Result<Batch, DataError> {
    let b = windows.len();
    let dims = JOINTS * (COORD_DIMS + LIE_DIMS);
    let kp_dims = JOINTS * 2;
    let mut kp2d = Tensor::zeros(&[past * b, kp_dims]);
    let mut gt_past = Tensor::zeros(&[past * b, dims]);
    let mut gt_future = Tensor::zeros(&[future * b, dims]);

    let fill_gt = |dst: &mut Tensor, row: usize, frame: &Frame| -> Result<(), DataError> {
        let lie = frame
            .lie
            .as_ref()
            .ok_or_else(|| DataError::MissingField("frame without lie field in batch".into()))?;
        let out = &mut dst.data_mut()[row * dims..(row + 1) * dims];
        for (j, p) in frame.coord.iter().enumerate() {
            out[j * COORD_DIMS..(j + 1) * COORD_DIMS].copy_from_slice(p);
        }
        for (j, t) in lie.iter().enumerate() {
            let base = JOINTS * COORD_DIMS + j * LIE_DIMS;
            out[base..base + LIE_DIMS].copy_from_slice(t);
        }
        Ok(())
    };

    for (bi, w) in windows.iter().enumerate() {
        let traj = &trajs[w.traj];
        if w.start + past + future > traj.len() {
            return Err(DataError::MissingField(format!(
                "window at {} needs {} frames, trajectory {} has {}",
                w.start,
                past + future,
                w.traj,
                traj.len()
            )));
        }
        for t in 0..past {
            let frame = &traj.frames[w.start + t];
            let kp = frame
                .kp2d
                .as_ref()
                .ok_or_else(|| DataError::MissingField("frame without kp2d field in batch".into()))?;
            let row = t * b + bi;
            let out = &mut kp2d.data_mut()[row * kp_dims..(row + 1) * kp_dims];
            for (j, p) in kp.iter().enumerate() {
                out[j * 2..j * 2 + 2].copy_from_slice(p);
            }
            fill_gt(&mut gt_past, row, frame)?;
        }
        for k in 0..future {
            let frame = &traj.frames[w.start + past + k];
            fill_gt(&mut gt_future, k * b + bi, frame)?;
        }
    }
    Ok(Batch { kp2d, gt_past, gt_future, size: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_trajectory(rng: &mut ChaCha8Rng, label: &str, frames: usize) -> Trajectory {
        let mut traj = Trajectory::new(label, 25.0);
        for _ in 0..frames {
            traj.frames.push(Frame {
                coord: (0..JOINTS).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
                lie: Some((0..JOINTS).map(|_| [rng.gen(); 6]).collect()),
                kp2d: Some((0..JOINTS).map(|_| [rng.gen(), rng.gen()]).collect()),
                root: Some([rng.gen(), 0.9, rng.gen()]),
            });
        }
        traj
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = random_trajectory(&mut rng, "walk", 12);
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn optional_fields_may_be_absent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut traj = Trajectory::new("wave", 25.0);
        traj.frames.push(Frame {
            coord: vec![[0.0; 3]; JOINTS],
            lie: None,
            kp2d: None,
            root: None,
        });
        write_trajectory(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("lie"), "absent fields should not serialize");
        let back = read_trajectory(&path).unwrap();
        assert!(back.frames[0].lie.is_none());
        assert!(back.frames[0].kp2d.is_none());
    }

    #[test]
    fn wrong_joint_count_is_a_parse_error_naming_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut traj = random_trajectory(&mut rng, "walk", 3);
        traj.frames[1].coord.pop();
        write_trajectory(&traj, &path).unwrap();
        let err = read_trajectory(&path).unwrap_err();
        match err {
            DataError::Parse { line, detail } => {
                assert_eq!(line, 3, "frame 1 lives on line 3");
                assert!(detail.contains("frame 1"), "{detail}");
                assert!(detail.contains("15 joints"), "{detail}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn schema_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"schema\":\"pmn-traj/2\",\"frame_rate\":25.0,\"label\":\"x\"}\n")
            .unwrap();
        let err = read_trajectory(&path).unwrap_err();
        assert!(matches!(err, DataError::SchemaVersion { .. }), "got {err:?}");
        assert!(err.to_string().contains("SCHEMA_VERSION_MISMATCH"));
    }

    #[test]
    fn garbage_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let header = format!("{{\"schema\":\"{SCHEMA}\",\"frame_rate\":25.0,\"label\":\"x\"}}");
        std::fs::write(&path, format!("{header}\nnot json\n")).unwrap();
        let err = read_trajectory(&path).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn window_count_matches_the_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajs = vec![random_trajectory(&mut rng, "walk", 100)];
        let set = make_windows(&trajs, 27, 20, 10, 1.0, 0);
        assert_eq!(set.train.len(), 6, "(100 - 47) / 10 + 1");
        assert!(set.test.is_empty());
        assert_eq!(set.train[0].start, 0);
        assert_eq!(set.train[5].start, 50);
    }

    #[test]
    fn split_is_disjoint_by_trajectory_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trajs: Vec<_> = (0..10)
            .map(|i| random_trajectory(&mut rng, &format!("t{i}"), 60))
            .collect();
        let a = make_windows(&trajs, 9, 20, 5, 0.8, 11);
        let b = make_windows(&trajs, 9, 20, 5, 0.8, 11);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert!(!a.test.is_empty());
        let train_srcs: std::collections::BTreeSet<_> = a.train.iter().map(|w| w.traj).collect();
        let test_srcs: std::collections::BTreeSet<_> = a.test.iter().map(|w| w.traj).collect();
        assert!(train_srcs.is_disjoint(&test_srcs), "window leakage across splits");

        let c = make_windows(&trajs, 9, 20, 5, 0.8, 12);
        assert!(c.train != a.train || c.test != a.test, "different seed, same split");
    }

    #[test]
    fn short_trajectories_are_skipped_with_a_warning() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trajs = vec![
            random_trajectory(&mut rng, "long", 60),
            random_trajectory(&mut rng, "short", 20),
        ];
        let set = make_windows(&trajs, 27, 20, 10, 1.0, 0);
        assert_eq!(set.warnings.len(), 1);
        assert!(set.warnings[0].contains("TOO_SHORT"));
        assert!(set.warnings[0].contains("short"));
        assert!(set.train.iter().all(|w| w.traj == 0));
    }

    #[test]
    fn split_assignment_ignores_the_window_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        // Lengths straddle the eligibility cutoffs of the two spans.
        let trajs: Vec<_> = (0..12)
            .map(|i| random_trajectory(&mut rng, &format!("t{i}"), 30 + 3 * i))
            .collect();
        let short_span = make_windows(&trajs, 9, 20, 5, 0.7, 3);
        let long_span = make_windows(&trajs, 9, 25, 5, 0.7, 3);
        let split_of = |set: &WindowSet, traj: usize| {
            set.train
                .iter()
                .chain(&set.test)
                .find(|w| w.traj == traj)
                .map(|w| w.split)
        };
        for t in 0..trajs.len() {
            if let (Some(a), Some(b)) = (split_of(&short_span, t), split_of(&long_span, t)) {
                assert_eq!(a, b, "trajectory {t} changed split with the window span");
            }
        }
    }

    #[test]
    fn tiling_covers_every_eligible_frame_when_stride_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (past, future) = (9, 4);
        let trajs = vec![random_trajectory(&mut rng, "walk", 57)];
        let set = make_windows(&trajs, past, future, past, 1.0, 0);
        let mut covered = vec![false; trajs[0].len()];
        for w in &set.train {
            for f in w.start..w.start + past + future {
                covered[f] = true;
            }
        }
        let eligible = (trajs[0].len() - past - future) / past * past + past + future;
        assert!(covered[..eligible].iter().all(|&c| c));
    }

    #[test]
    fn batch_layout_is_time_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trajs = vec![
            random_trajectory(&mut rng, "a", 40),
            random_trajectory(&mut rng, "b", 40),
        ];
        let windows = vec![
            Window { traj: 0, start: 3, split: Split::Train },
            Window { traj: 1, start: 10, split: Split::Train },
        ];
        let (past, future) = (5, 2);
        let batch = assemble_batch(&trajs, &windows, past, future).unwrap();
        assert_eq!(batch.kp2d.shape(), &[past * 2, 32]);
        assert_eq!(batch.gt_past.shape(), &[past * 2, 144]);
        assert_eq!(batch.gt_future.shape(), &[future * 2, 144]);

        // Row t*B + b holds window b's frame at offset t.
        let t = 4;
        let frame = &trajs[1].frames[10 + t];
        let row = t * 2 + 1;
        let got = &batch.kp2d.data()[row * 32..row * 32 + 2];
        assert_eq!(got, &frame.kp2d.as_ref().unwrap()[0]);
        let got = &batch.gt_past.data()[row * 144..row * 144 + 3];
        assert_eq!(got, &frame.coord[0]);
        let got = &batch.gt_past.data()[row * 144 + 48..row * 144 + 48 + 6];
        assert_eq!(got, &frame.lie.as_ref().unwrap()[0]);

        // Future rows continue past the observed span: step k=1 of window
        // b=0 sits at row k*B + b = 2.
        let frame = &trajs[0].frames[3 + past + 1];
        let got = &batch.gt_future.data()[2 * 144..2 * 144 + 3];
        assert_eq!(got, &frame.coord[0]);
    }

    #[test]
    fn batch_requires_kp2d_and_lie() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut trajs = vec![random_trajectory(&mut rng, "a", 30)];
        trajs[0].frames[2].kp2d = None;
        let windows = vec![Window { traj: 0, start: 0, split: Split::Train }];
        let err = assemble_batch(&trajs, &windows, 5, 2).unwrap_err();
        assert!(matches!(err, DataError::MissingField(_)), "got {err:?}");
    }
}
