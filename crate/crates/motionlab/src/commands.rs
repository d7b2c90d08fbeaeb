//! Implementations behind the `motionlab` subcommands.
//!
//! Every command returns a [`CommandError`] that carries its process exit
//! code: 2 for usage and configuration problems, 3 for training
//! divergence, 4 for I/O and file-schema failures.

use crate::ablate::{
    lie_csv, lie_study, multitask_csv, multitask_study, refinement_csv, refinement_study,
    AblateError,
};
use crate::autodiff::Tensor;
use crate::checkpoint::{ensure_compatible, load_checkpoint, CheckpointError};
use crate::cli::{
    AblateArgs, AblatePreset, Cli, Command, EvalArgs, PredictArgs, SynthArgs, TrainArgs,
};
use crate::config::{Config, ConfigError};
use crate::data::{
    make_windows, read_trajectory, write_trajectory, DataError, Frame, Trajectory,
};
use crate::eval::{evaluate, reports_to_csv, EvalError, EvalRequest};
use crate::metrics::max_horizon_frames;
use crate::models::{ModelError, PoseMoNet, RunMode};
use crate::pose::{CoordPose, LiePose};
use crate::skeleton::Skeleton;
use crate::synth::{
    derive_seed, project_2d, synth_motion, write_camera, Camera, MotionKind, SynthError,
};
use crate::train::{train, TrainError, TrainOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;

#[derive(Debug, Error)]
pub enum CommandError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Training diverged; exit code 3.
    #[error("{0}")]
    Diverged(String),
    /// I/O or file-schema failure; exit code 4.
    #[error("{0}")]
    Failure(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => EXIT_USAGE,
            CommandError::Diverged(_) => EXIT_DIVERGED,
            CommandError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.to_string())
    }
}

impl From<TrainError> for CommandError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CommandError::Diverged(e.to_string()),
            other => CommandError::Failure(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CommandError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::ConfigMismatch(_) => CommandError::Usage(e.to_string()),
            other => CommandError::Failure(other.to_string()),
        }
    }
}

impl From<AblateError> for CommandError {
    fn from(e: AblateError) -> Self {
        match e {
            AblateError::Train(inner) => inner.into(),
            other => CommandError::Failure(other.to_string()),
        }
    }
}

macro_rules! failure_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CommandError {
            fn from(e: $ty) -> Self {
                CommandError::Failure(e.to_string())
            }
        }
    )*};
}
failure_from!(DataError, SynthError, EvalError, ModelError, std::io::Error, serde_json::Error);

/// Dispatches a parsed invocation.
pub fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Ablate(args) => cmd_ablate(&args),
    }
}

pub const DATASET_SCHEMA: &str = "pmn-dataset/1";
pub const CAMERA_FILE: &str = "camera.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    pub noise_px: f64,
    pub camera: String,
    pub trajectories: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub frames: usize,
}

/// Reads every trajectory named by a dataset manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Trajectory>, CommandError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
        CommandError::Failure(format!("IO_ERROR: {}: {e}", manifest_path.display()))
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(CommandError::Failure(format!(
            "SCHEMA_VERSION_MISMATCH: dataset manifest is {:?}, expected {:?}",
            manifest.schema, DATASET_SCHEMA
        )));
    }
    manifest
        .trajectories
        .iter()
        .map(|e| read_trajectory(dir.join(&e.file)).map_err(CommandError::from))
        .collect()
}

fn parse_kinds(spec: &str) -> Result<Vec<MotionKind>, CommandError> {
    let kinds: Result<Vec<_>, _> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(MotionKind::from_str)
        .collect();
    let kinds = kinds.map_err(|e| CommandError::Usage(e.to_string()))?;
    if kinds.is_empty() {
        return Err(CommandError::Usage("--kinds lists no motion kinds".into()));
    }
    Ok(kinds)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CommandError> {
    let kinds = parse_kinds(&args.kinds)?;
    if args.sequences == 0 {
        return Err(CommandError::Usage("--sequences must be positive".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let camera = Camera::default();
    write_camera(&camera, args.out.join(CAMERA_FILE))?;

    let mut entries = Vec::with_capacity(args.sequences);
    for i in 0..args.sequences {
        let kind = kinds[i % kinds.len()];
        let traj = synth_motion(kind, args.length, derive_seed(args.seed, i as u64))?;
        let traj = project_2d(&traj, &camera, args.noise_px, derive_seed(args.seed, 1_000_000 + i as u64))?;
        let file = format!("traj_{i:04}.jsonl");
        write_trajectory(&traj, args.out.join(&file))?;
        entries.push(ManifestEntry { file, kind: kind.to_string(), frames: traj.len() });
    }
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.to_string(),
        seed: args.seed,
        noise_px: args.noise_px,
        camera: CAMERA_FILE.to_string(),
        trajectories: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(args.out.join(MANIFEST_FILE), text)?;
    println!("wrote {} trajectories to {}", args.sequences, args.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, CommandError> {
    let mut config = match path {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for (i, entry) in overrides.iter().enumerate() {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            CommandError::Usage(format!("--set expects key=value, got {entry:?}"))
        })?;
        config.set(key.trim(), value.trim(), i + 1)?;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CommandError> {
    let config = load_config(args.config.as_deref(), &args.set)?;
    let trajs = load_dataset(&args.data)?;
    let windows = make_windows(
        &trajs,
        config.past_frames,
        config.future_frames,
        config.stride,
        config.train_ratio,
        config.seed,
    );
    for w in &windows.warnings {
        eprintln!("warning: {w}");
    }
    let opts = TrainOptions {
        log_path: args.log.clone(),
        ckpt_path: Some(args.out.clone()),
        verbose: true,
        ..Default::default()
    };
    let result = train(&config, Arc::new(Skeleton::default_h36m16()), &trajs, &windows.train, &opts)?;
    println!(
        "trained {} epochs ({} steps); final total {:.6}, best {:.6} at epoch {}",
        result.history.len(),
        result.steps,
        result.final_total(),
        result.best_total,
        result.best_epoch
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CommandError> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    if let Some(path) = &args.config {
        let supplied = Config::from_file(path)?;
        ensure_compatible(&ckpt.config, &supplied)?;
    }
    let trajs = load_dataset(&args.data)?;
    let frame_rate = trajs.first().map(|t| t.frame_rate).unwrap_or(25.0);
    let future = max_horizon_frames(frame_rate);
    let windows = make_windows(
        &trajs,
        ckpt.config.past_frames,
        future,
        ckpt.config.stride,
        ckpt.config.train_ratio,
        ckpt.config.seed,
    );
    for w in &windows.warnings {
        eprintln!("warning: {w}");
    }
    let run_id = args
        .ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "eval".to_string());
    let model = PoseMoNet::new(ckpt.config.clone(), Arc::new(Skeleton::default_h36m16()));
    let reports = evaluate(&EvalRequest {
        model: &model,
        params: &ckpt.params,
        trajs: &trajs,
        windows: &windows.test,
        future,
        run_id: &run_id,
        split: "test",
        threads: 0,
    })?;
    std::fs::write(&args.report, reports_to_csv(&reports))?;
    if let Some(all) = reports.last() {
        println!(
            "{} windows: MPJPE {:.3} mm, P-MPJPE {:.3} mm",
            all.windows, all.mpjpe_mm, all.p_mpjpe_mm
        );
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CommandError> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let config = &ckpt.config;
    let input = read_trajectory(&args.input)?;
    let past = config.past_frames;
    if input.len() < past {
        return Err(CommandError::Failure(format!(
            "INSUFFICIENT_FRAMES: need at least {past} frames with 2D keypoints, got {}",
            input.len()
        )));
    }
    let start = input.len() - past;
    let mut kp = Vec::with_capacity(past * 32);
    for (t, frame) in input.frames[start..].iter().enumerate() {
        let kp2d = frame.kp2d.as_ref().ok_or_else(|| {
            CommandError::Failure(format!(
                "MISSING_FIELD: frame {} has no 2D keypoints",
                start + t + 1
            ))
        })?;
        kp.extend(kp2d.iter().flatten());
    }
    let skeleton = Arc::new(Skeleton::default_h36m16());
    let model = PoseMoNet::new(config.clone(), skeleton.clone());
    let kp2d = Tensor::from_vec(&[past, skeleton.joint_count() * 2], kp)
        .map_err(|e| CommandError::Failure(e.to_string()))?;
    let params = &ckpt.params;

    let mut g = crate::autodiff::Graph::new();
    let fwd = model.forward(&mut g, params, &kp2d, 1, args.horizon, RunMode::eval())?;
    // A zero horizon asks for the raw pose estimates, before refinement.
    let node = if args.horizon == 0 { fwd.pln_frames } else { fwd.output() };
    let out = g.value(node);

    let dims = model.frame_dims();
    let coord_width = skeleton.joint_count() * 3;
    let mut result = Trajectory::new(input.label.clone(), input.frame_rate);
    for row in out.data().chunks_exact(dims) {
        let coord = CoordPose::from_flat(&row[..coord_width], skeleton.root);
        let lie = LiePose::from_flat(&row[coord_width..], skeleton.root);
        result.frames.push(Frame {
            coord: coord.joints().to_vec(),
            lie: Some(
                lie.to_flat().chunks_exact(6).map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]]).collect(),
            ),
            kp2d: None,
            root: None,
        });
    }
    write_trajectory(&result, &args.out)?;
    println!(
        "wrote {} frames ({past} estimated + {} predicted) to {}",
        result.len(),
        result.len() - past,
        args.out.display()
    );
    Ok(())
}

/// Study preset shared by every `ablate` arm: a small model and schedule
/// sized so the full preset completes in minutes on one core.
fn ablate_config(args: &AblateArgs) -> Config {
    let mut cfg = Config::default();
    cfg.hidden = 64;
    cfg.past_frames = 9;
    cfg.future_frames = 20;
    cfg.epochs = args.epochs;
    cfg.batch = 16;
    cfg.batches_per_epoch = 8;
    cfg.stride = 10;
    cfg.seed = args.seed;
    cfg
}

fn ablate_dataset(args: &AblateArgs) -> Result<Vec<Trajectory>, CommandError> {
    let kinds = [MotionKind::Walk, MotionKind::Wave, MotionKind::Squat];
    let camera = Camera::default();
    let mut trajs = Vec::with_capacity(args.sequences);
    for i in 0..args.sequences {
        let kind = kinds[i % kinds.len()];
        let traj = synth_motion(kind, args.length, derive_seed(args.seed, i as u64))?;
        trajs.push(project_2d(&traj, &camera, 3.0, derive_seed(args.seed, 1_000_000 + i as u64))?);
    }
    Ok(trajs)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CommandError> {
    let base = ablate_config(args);
    let trajs = ablate_dataset(args)?;
    let csv = match args.preset {
        AblatePreset::Multitask => {
            let rows = multitask_study(&base, &trajs, &[9, 27, 54])?;
            multitask_csv(&rows)
        }
        AblatePreset::Refinement => {
            let rows = refinement_study(&base, &trajs)?;
            refinement_csv(&rows)
        }
        AblatePreset::Lie => {
            let (rows, summary) = lie_study(&base, &trajs, &[args.seed, args.seed + 1, args.seed + 2])?;
            if summary.unstable {
                eprintln!("no-lie arm flagged unstable (diverged: {})", summary.no_lie_diverged);
            }
            lie_csv(&rows, &summary)
        }
    };
    std::fs::write(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}
