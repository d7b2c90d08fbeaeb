//! Ablation studies: paired training runs that isolate one design choice
//! at a time and report its effect on held-out metrics.
//!
//! Three presets are provided. `multitask` measures whether training the
//! motion decoder alongside the pose lifter helps pose accuracy across
//! observation spans. `refinement` scores each global-refinement variant
//! against an unrefined baseline. `lie` compares training stability with
//! and without the Lie-algebra channels across seeds.

use crate::config::Config;
use crate::data::{make_windows, Trajectory, Window};
use crate::eval::{evaluate, EvalError, EvalRequest};
use crate::metrics::{max_horizon_frames, MetricReport};
use crate::models::PoseMoNet;
use crate::skeleton::Skeleton;
use crate::train::{train, TrainError, TrainOptions, TrainResult};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AblateError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("EMPTY_SPLIT: study dataset produced no {0} windows")]
    EmptySplit(&'static str),
}

/// Splits used by every arm of a study: training windows over the
/// configured span, evaluation windows long enough for the last horizon.
fn study_windows(
    config: &Config,
    trajs: &[Trajectory],
) -> Result<(Vec<Window>, Vec<Window>, usize), AblateError> {
    let frame_rate = trajs.first().map(|t| t.frame_rate).unwrap_or(25.0);
    let eval_future = max_horizon_frames(frame_rate);
    let train_set = make_windows(
        trajs,
        config.past_frames,
        config.future_frames,
        config.stride,
        config.train_ratio,
        config.seed,
    );
    let eval_set = make_windows(
        trajs,
        config.past_frames,
        eval_future,
        config.stride,
        config.train_ratio,
        config.seed,
    );
    if train_set.train.is_empty() {
        return Err(AblateError::EmptySplit("training"));
    }
    if eval_set.test.is_empty() {
        return Err(AblateError::EmptySplit("evaluation"));
    }
    Ok((train_set.train, eval_set.test, eval_future))
}

/// Trains one configuration and evaluates its best parameters on the
/// held-out split. Returns the training result and the metric reports
/// (per label plus the trailing `all` aggregate).
pub fn train_and_eval(
    config: &Config,
    trajs: &[Trajectory],
    run_id: &str,
) -> Result<(TrainResult, Vec<MetricReport>), AblateError> {
    let (train_windows, eval_windows, eval_future) = study_windows(config, trajs)?;
    let skeleton = Arc::new(Skeleton::default_h36m16());
    let result = train(config, skeleton.clone(), trajs, &train_windows, &TrainOptions::default())?;
    let model = PoseMoNet::new(config.clone(), skeleton);
    let reports = evaluate(&EvalRequest {
        model: &model,
        params: &result.best_params,
        trajs,
        windows: &eval_windows,
        future: eval_future,
        run_id,
        split: "test",
        threads: 0,
    })?;
    Ok((result, reports))
}

fn aggregate_mpjpe(reports: &[MetricReport]) -> f64 {
    reports.last().map(|r| r.mpjpe_mm).unwrap_or(f64::NAN)
}

/// One observation span of the multitask study.
#[derive(Debug, Clone)]
pub struct MultitaskRow {
    pub past_frames: usize,
    pub with_mgn_mpjpe_mm: f64,
    pub without_mgn_mpjpe_mm: f64,
}

/// Pose accuracy with and without the motion decoder, refinement off in
/// both arms so only the multitask factor differs.
pub fn multitask_study(
    base: &Config,
    trajs: &[Trajectory],
    spans: &[usize],
) -> Result<Vec<MultitaskRow>, AblateError> {
    let mut rows = Vec::with_capacity(spans.len());
    for &t in spans {
        let mut with_mgn = base.clone();
        with_mgn.past_frames = t;
        with_mgn.no_gr = true;
        with_mgn.no_mgn = false;
        let mut without_mgn = with_mgn.clone();
        without_mgn.no_mgn = true;
        let (_, with_reports) = train_and_eval(&with_mgn, trajs, &format!("multitask-t{t}-mgn"))?;
        let (_, without_reports) =
            train_and_eval(&without_mgn, trajs, &format!("multitask-t{t}-plain"))?;
        rows.push(MultitaskRow {
            past_frames: t,
            with_mgn_mpjpe_mm: aggregate_mpjpe(&with_reports),
            without_mgn_mpjpe_mm: aggregate_mpjpe(&without_reports),
        });
    }
    Ok(rows)
}

pub fn multitask_csv(rows: &[MultitaskRow]) -> String {
    let mut out = String::from("past_frames,with_mgn_mpjpe_mm,without_mgn_mpjpe_mm\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9}",
            r.past_frames, r.with_mgn_mpjpe_mm, r.without_mgn_mpjpe_mm
        );
    }
    out
}

/// One refinement variant scored against the unrefined baseline.
#[derive(Debug, Clone)]
pub struct RefinementRow {
    pub variant: String,
    pub mpjpe_mm: f64,
    pub baseline_mpjpe_mm: f64,
    pub improvement_mm: f64,
}

/// Each refinement mode against the same model with refinement disabled.
pub fn refinement_study(
    base: &Config,
    trajs: &[Trajectory],
) -> Result<Vec<RefinementRow>, AblateError> {
    use crate::config::GrMode;
    let mut baseline_cfg = base.clone();
    baseline_cfg.no_gr = true;
    let (_, baseline_reports) = train_and_eval(&baseline_cfg, trajs, "refine-none")?;
    let baseline = aggregate_mpjpe(&baseline_reports);

    let variants = [
        ("gru", GrMode::Gru),
        ("conved", GrMode::Conved),
        ("blend_fixed", GrMode::BlendFixed),
        ("blend_adaptive", GrMode::BlendAdaptive),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (name, mode) in variants {
        let mut cfg = base.clone();
        cfg.no_gr = false;
        cfg.gr_mode = mode;
        let (_, reports) = train_and_eval(&cfg, trajs, &format!("refine-{name}"))?;
        let mpjpe = aggregate_mpjpe(&reports);
        rows.push(RefinementRow {
            variant: name.to_string(),
            mpjpe_mm: mpjpe,
            baseline_mpjpe_mm: baseline,
            improvement_mm: baseline - mpjpe,
        });
    }
    Ok(rows)
}

pub fn refinement_csv(rows: &[RefinementRow]) -> String {
    let mut out = String::from("variant,mpjpe_mm,no_refinement_mpjpe_mm,improvement_mm\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9}",
            r.variant, r.mpjpe_mm, r.baseline_mpjpe_mm, r.improvement_mm
        );
    }
    out
}

/// One training run of the Lie-channel stability study.
#[derive(Debug, Clone)]
pub struct LieRow {
    pub arm: String,
    pub seed: u64,
    pub final_total: f64,
    pub diverged: bool,
}

/// Cross-arm stability verdict.
#[derive(Debug, Clone)]
pub struct LieSummary {
    pub full_variance: f64,
    pub no_lie_variance: f64,
    pub no_lie_diverged: bool,
    pub full_diverged: bool,
    /// The no-lie arm diverged or its final-loss variance is at least
    /// five times the full model's.
    pub unstable: bool,
}

/// Trains the full model and the coordinate-only model across seeds and
/// compares final-loss variance. Divergence in an arm is recorded, not
/// treated as a study failure.
pub fn lie_study(
    base: &Config,
    trajs: &[Trajectory],
    seeds: &[u64],
) -> Result<(Vec<LieRow>, LieSummary), AblateError> {
    let mut rows = Vec::new();
    for (arm, no_lie) in [("full", false), ("no_lie", true)] {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.no_lie = no_lie;
            cfg.seed = seed;
            let row = match train(
                &cfg,
                Arc::new(Skeleton::default_h36m16()),
                trajs,
                &study_windows(&cfg, trajs)?.0,
                &TrainOptions::default(),
            ) {
                Ok(result) => LieRow {
                    arm: arm.to_string(),
                    seed,
                    final_total: result.final_total(),
                    diverged: false,
                },
                Err(TrainError::Diverged { total, .. }) => LieRow {
                    arm: arm.to_string(),
                    seed,
                    final_total: total,
                    diverged: true,
                },
                Err(e) => return Err(e.into()),
            };
            rows.push(row);
        }
    }
    let variance = |arm: &str| {
        let finals: Vec<f64> = rows
            .iter()
            .filter(|r| r.arm == arm && !r.diverged)
            .map(|r| r.final_total)
            .collect();
        if finals.len() < 2 {
            return f64::INFINITY;
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / finals.len() as f64
    };
    let full_variance = variance("full");
    let no_lie_variance = variance("no_lie");
    let no_lie_diverged = rows.iter().any(|r| r.arm == "no_lie" && r.diverged);
    let full_diverged = rows.iter().any(|r| r.arm == "full" && r.diverged);
    let unstable = no_lie_diverged || no_lie_variance >= 5.0 * full_variance;
    Ok((
        rows,
        LieSummary { full_variance, no_lie_variance, no_lie_diverged, full_diverged, unstable },
    ))
}

pub fn lie_csv(rows: &[LieRow], summary: &LieSummary) -> String {
    let mut out = String::from("arm,seed,final_total,diverged,arm_variance,unstable\n");
    for r in rows {
        let var = if r.arm == "full" { summary.full_variance } else { summary.no_lie_variance };
        let unstable = r.arm == "no_lie" && summary.unstable;
        let _ = writeln!(
            out,
            "{},{},{:.9},{},{:.9},{}",
            r.arm, r.seed, r.final_total, r.diverged, var, unstable
        );
    }
    out
}
