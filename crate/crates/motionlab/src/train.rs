//! The training loop: shuffled minibatches over training windows, SGD
//! with step decay and gradient clipping, per-epoch CSV logging, and
//! best/final checkpointing.

use crate::autodiff::{Graph, GraphError, ParamSet, Sgd, SgdConfig};
use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::config::Config;
use crate::data::{assemble_batch, DataError, Trajectory, Window};
use crate::models::{ModelError, PoseMoNet, RunMode};
use crate::skeleton::Skeleton;
use crate::synth::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Loss threshold beyond which training aborts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("DIVERGED: total loss {total:.6e} at epoch {epoch}, step {step} (limit {DIVERGENCE_LIMIT:.0e})")]
    Diverged { epoch: usize, step: usize, total: f64 },
    #[error("EMPTY_SPLIT: no training windows")]
    EmptySplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-epoch loss means and the learning rate in effect at epoch end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub pln: f64,
    pub mgn: f64,
    pub gr: f64,
    pub omega: f64,
    pub lr: f64,
}

impl EpochStats {
    pub fn csv_header() -> &'static str {
        "epoch,total,l_pln,l_mgn,l_gr,omega_sp,lr"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            fmt(self.total),
            fmt(self.pln),
            fmt(self.mgn),
            fmt(self.gr),
            fmt(self.omega),
            fmt(self.lr)
        )
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.9}")
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Per-epoch CSV log destination; created fresh.
    pub log_path: Option<PathBuf>,
    /// Final checkpoint destination; the best checkpoint lands next to it
    /// (see [`best_checkpoint_path`]).
    pub ckpt_path: Option<PathBuf>,
    /// Warm start from these parameters instead of a fresh
    /// initialisation, e.g. to resume or fine-tune with a new schedule.
    pub init_params: Option<ParamSet>,
    /// Echo per-epoch stats to stderr.
    pub verbose: bool,
}

/// Everything a caller needs after training.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub final_params: ParamSet,
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub best_total: f64,
    pub steps: usize,
}

impl TrainResult {
    pub fn final_total(&self) -> f64 {
        self.history.last().map(|e| e.total).unwrap_or(f64::NAN)
    }
}

/// The best checkpoint is the sibling of the final one with a `best.`
/// prefix on the file name.
pub fn best_checkpoint_path(ckpt: &Path) -> PathBuf {
    let name = ckpt.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    ckpt.with_file_name(format!("best.{name}"))
}

/// Trains a model from scratch. Deterministic in `config.seed`: batch
/// sampling, parameter init, and dropout masks all derive from it.
pub fn train(
    config: &Config,
    skeleton: Arc<Skeleton>,
    trajs: &[Trajectory],
    windows: &[Window],
    opts: &TrainOptions,
) -> Result<TrainResult, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let model = PoseMoNet::new(config.clone(), skeleton);
    let mut params = match &opts.init_params {
        Some(warm) => warm.clone(),
        None => model.init_params()?,
    };
    let mut sgd = Sgd::new(SgdConfig {
        lr0: config.lr,
        decay_every: config.decay_every,
        decay_factor: config.decay_factor,
        momentum: config.momentum,
        clip_norm: config.clip_norm,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5A));
    let batch_size = config.batch.min(windows.len());
    let batches_per_epoch = if config.batches_per_epoch > 0 {
        config.batches_per_epoch
    } else {
        windows.len().div_ceil(batch_size)
    };

    let mut log = match &opts.log_path {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "{}", EpochStats::csv_header())?;
            Some(f)
        }
        None => None,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_total = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut picked = Vec::with_capacity(batch_size);

    // Shuffle-and-chunk batching: windows are visited in a seeded random
    // order, reshuffled whenever the permutation is exhausted, so every
    // window is covered evenly and small sets train on a stable batch.
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 5];
        for _ in 0..batches_per_epoch {
            picked.clear();
            for _ in 0..batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                picked.push(windows[order[cursor]]);
                cursor += 1;
            }
            let batch = assemble_batch(trajs, &picked, config.past_frames, config.future_frames)?;

            let mut g = Graph::new();
            let step = sgd.step_count();
            let mode = RunMode::train(derive_seed(config.seed, 0x1000 + step as u64));
            let fwd = model.forward(&mut g, &params, &batch.kp2d, batch.size, config.future_frames, mode)?;
            let gt_past = g.input(batch.gt_past);
            let gt_future = if config.future_frames > 0 && !config.no_mgn {
                Some(g.input(batch.gt_future))
            } else {
                None
            };
            let losses = model.losses(&mut g, &fwd, gt_past, gt_future)?;

            let total = g.value(losses.total).item()?;
            if !total.is_finite() || total > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged { epoch, step, total });
            }
            sums[0] += total;
            sums[1] += g.value(losses.pln).item()?;
            if let Some(m) = losses.mgn {
                sums[2] += g.value(m).item()?;
            }
            if let Some(r) = losses.gr {
                sums[3] += g.value(r).item()?;
            }
            sums[4] += g.value(losses.omega).item()?;

            params.zero_grads();
            g.backward(losses.total, &mut params)?;
            sgd.apply(&mut params);
        }
        let n = batches_per_epoch as f64;
        let stats = EpochStats {
            epoch,
            total: sums[0] / n,
            pln: sums[1] / n,
            mgn: sums[2] / n,
            gr: sums[3] / n,
            omega: sums[4] / n,
            lr: sgd.effective_lr(),
        };
        history.push(stats);
        if let Some(f) = &mut log {
            writeln!(f, "{}", stats.to_csv_row())?;
            f.flush()?;
        }
        if opts.verbose {
            eprintln!(
                "epoch {:>4}/{}: total {:.6} pln {:.6} mgn {:.6} gr {:.6} omega {:.6} lr {:.6}",
                epoch, config.epochs, stats.total, stats.pln, stats.mgn, stats.gr, stats.omega, stats.lr
            );
        }
        if stats.total < best_total {
            best_total = stats.total;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    if let Some(path) = &opts.ckpt_path {
        save_checkpoint(path, config, sgd.step_count(), &params)?;
        save_checkpoint(best_checkpoint_path(path), config, sgd.step_count(), &best_params)?;
    }
    Ok(TrainResult {
        history,
        final_params: params,
        best_params,
        best_epoch,
        best_total,
        steps: sgd.step_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;
    use crate::synth::{project_2d, synth_dataset, Camera, MotionKind};

    fn tiny_dataset(seed: u64) -> Vec<Trajectory> {
        let camera = Camera::default();
        synth_dataset(&[MotionKind::Walk, MotionKind::Wave], 4, 40, seed)
            .unwrap()
            .iter()
            .map(|t| project_2d(t, &camera, 2.0, seed).unwrap())
            .collect()
    }

    fn tiny_config() -> Config {
        let mut config = Config::default();
        config.past_frames = 9;
        config.future_frames = 5;
        config.hidden = 8;
        config.epochs = 2;
        config.batch = 4;
        config.batches_per_epoch = 2;
        config.seed = 3;
        config
    }

    #[test]
    fn training_runs_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let trajs = tiny_dataset(1);
        let config = tiny_config();
        let windows = make_windows(&trajs, config.past_frames, config.future_frames, config.stride, 1.0, config.seed);
        let opts = TrainOptions {
            log_path: Some(dir.path().join("log.csv")),
            ckpt_path: Some(dir.path().join("model.pmn")),
            ..Default::default()
        };
        let skeleton = Arc::new(Skeleton::default_h36m16());
        let result = train(&config, skeleton, &trajs, &windows.train, &opts).unwrap();
        assert_eq!(result.history.len(), 2);
        assert_eq!(result.steps, 4);
        assert!(result.history.iter().all(|e| e.total.is_finite()));

        let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), "epoch,total,l_pln,l_mgn,l_gr,omega_sp,lr");
        assert_eq!(lines.count(), 2);

        let ckpt = crate::checkpoint::load_checkpoint(dir.path().join("model.pmn")).unwrap();
        assert_eq!(ckpt.step, 4);
        assert_eq!(ckpt.config, config);
        for ((na, va), (nb, vb)) in result.final_params.iter().zip(ckpt.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
        assert!(best_checkpoint_path(&dir.path().join("model.pmn")).exists());
    }

    #[test]
    fn training_is_deterministic() {
        let trajs = tiny_dataset(2);
        let config = tiny_config();
        let windows = make_windows(&trajs, config.past_frames, config.future_frames, config.stride, 1.0, config.seed);
        let skeleton = Arc::new(Skeleton::default_h36m16());
        let a = train(&config, skeleton.clone(), &trajs, &windows.train, &TrainOptions::default()).unwrap();
        let b = train(&config, skeleton, &trajs, &windows.train, &TrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        for ((_, va), (_, vb)) in a.final_params.iter().zip(b.final_params.iter()) {
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn loss_decreases_on_a_small_run() {
        let trajs = tiny_dataset(3);
        let mut config = tiny_config();
        config.epochs = 8;
        config.batches_per_epoch = 3;
        config.lr = 0.005;
        let windows = make_windows(&trajs, config.past_frames, config.future_frames, config.stride, 1.0, config.seed);
        let skeleton = Arc::new(Skeleton::default_h36m16());
        let result = train(&config, skeleton, &trajs, &windows.train, &TrainOptions::default()).unwrap();
        let first = result.history.first().unwrap().total;
        let last = result.history.last().unwrap().total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn empty_split_is_an_error() {
        let trajs = tiny_dataset(4);
        let config = tiny_config();
        let skeleton = Arc::new(Skeleton::default_h36m16());
        let err = train(&config, skeleton, &trajs, &[], &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, TrainError::EmptySplit));
    }
}
