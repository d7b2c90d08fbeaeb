//! Command-line interface definitions for the `motionlab` binary.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 when
//! training diverges, 4 for I/O and file-schema failures.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "motionlab",
    version,
    about = "Skeletal motion toolkit: 3D pose estimation and future motion prediction from 2D keypoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic motion dataset with 2D keypoint projections.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a per-action metric report.
    Eval(EvalArgs),
    /// Estimate poses for one trajectory and predict future motion.
    Predict(PredictArgs),
    /// Run a preset ablation study and write its comparison table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for trajectories, camera, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of trajectories to generate.
    #[arg(long, default_value_t = 50)]
    pub sequences: usize,
    /// Comma-separated motion kinds to cycle through.
    #[arg(long, default_value = "walk,wave,squat,static,mixed")]
    pub kinds: String,
    /// Frames per trajectory (at 25 Hz).
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    /// Gaussian pixel noise applied to projected keypoints.
    #[arg(long, default_value_t = 3.0)]
    pub noise_px: f64,
    /// Master seed; every derived quantity is deterministic in it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by `motionlab synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Key=value configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint output path; a `best.` sibling is written alongside.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log path.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Inline overrides, e.g. `--set epochs=5 --set hidden=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory; the held-out split is used.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV report output path.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional config file cross-checked against the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input trajectory (JSONL) with 2D keypoints.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Future frames to predict; 0 writes pose estimates only.
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    /// Output trajectory path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblatePreset {
    /// Pose accuracy with and without the motion decoder, across spans.
    Multitask,
    /// Each refinement variant against the unrefined baseline.
    Refinement,
    /// Training stability with and without the Lie-algebra channels.
    Lie,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Which comparison to run.
    #[arg(long, value_enum)]
    pub preset: AblatePreset,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectories in the generated study dataset.
    #[arg(long, default_value_t = 40)]
    pub sequences: usize,
    /// Frames per trajectory.
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    /// Training epochs per arm.
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    /// Master seed for dataset and model initialisation.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}
