//! Window-level evaluation: MPJPE and P-MPJPE over the observed span,
//! MAE at the millisecond horizon grid over the future span, and the
//! zero-velocity baseline, aggregated per action label.
//!
//! Windows are processed in fixed chunks. Worker threads (capped by the
//! `MOTIONLAB_THREADS` environment variable) pull chunks from a shared
//! queue, but results are stored by chunk index and reduced in chunk
//! order, so reports are identical for any thread count.

use crate::autodiff::ParamSet;
use crate::data::{assemble_batch, DataError, Trajectory, Window};
use crate::metrics::{
    horizon_frames, mae, mpjpe, p_mpjpe, MetricAccumulator, MetricReport, MetricsError,
    HORIZONS_MS,
};
use crate::models::{ModelError, PoseMoNet, RunMode};
use crate::pose::{CoordPose, LiePose};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Windows per work unit; fixed so the reduction order never depends on
/// the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EMPTY_SPLIT: no evaluation windows")]
    EmptySplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Worker cap from `MOTIONLAB_THREADS`, else the available parallelism.
pub fn thread_cap() -> usize {
    match std::env::var("MOTIONLAB_THREADS") {
        Ok(v) => v.trim().parse::<usize>().unwrap_or(1).max(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// One evaluation request over a fixed window list.
pub struct EvalRequest<'a> {
    pub model: &'a PoseMoNet,
    pub params: &'a ParamSet,
    pub trajs: &'a [Trajectory],
    pub windows: &'a [Window],
    /// Future frames to decode; must cover the last horizon (25 at 25 Hz).
    pub future: usize,
    pub run_id: &'a str,
    pub split: &'a str,
    /// Worker count; 0 picks [`thread_cap`].
    pub threads: usize,
}

type LabelAccumulators = BTreeMap<String, MetricAccumulator>;

/// Evaluates every window and returns one report per action label
/// (sorted) plus an `all` aggregate row at the end.
pub fn evaluate(req: &EvalRequest) -> Result<Vec<MetricReport>, EvalError> {
    if req.windows.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let frame_rate = req.trajs[req.windows[0].traj].frame_rate;
    let horizon_idx: Vec<usize> = HORIZONS_MS
        .iter()
        .map(|&ms| horizon_frames(ms, frame_rate, req.future))
        .collect::<Result<_, _>>()?;

    let chunk_count = req.windows.len().div_ceil(CHUNK);
    let results: Vec<Mutex<Option<LabelAccumulators>>> =
        (0..chunk_count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = match req.threads {
        0 => thread_cap(),
        n => n,
    }
    .min(chunk_count)
    .max(1);

    std::thread::scope(|scope| -> Result<(), EvalError> {
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            handles.push(scope.spawn(|| -> Result<(), EvalError> {
                loop {
                    let c = next.fetch_add(1, Ordering::Relaxed);
                    if c >= chunk_count {
                        return Ok(());
                    }
                    let windows = &req.windows[c * CHUNK..((c + 1) * CHUNK).min(req.windows.len())];
                    let map = eval_chunk(req, windows, &horizon_idx)?;
                    *results[c].lock().expect("no poisoned result slots") = Some(map);
                }
            }));
        }
        for h in handles {
            h.join().expect("eval worker does not panic")?;
        }
        Ok(())
    })?;

    // Deterministic reduction: chunk order, then label order.
    let mut by_label: LabelAccumulators = BTreeMap::new();
    let mut all = MetricAccumulator::new();
    for slot in &results {
        let map = slot.lock().expect("no poisoned result slots");
        let map = map.as_ref().expect("all chunks were processed");
        for (label, acc) in map.iter() {
            by_label.entry(label.clone()).or_default().merge(acc);
        }
    }
    for acc in by_label.values() {
        all.merge(acc);
    }
    let mode = req.model.config().mae_mode;
    let mut reports: Vec<MetricReport> = by_label
        .iter()
        .map(|(label, acc)| acc.finalize(req.run_id, req.split, label, mode))
        .collect();
    reports.push(all.finalize(req.run_id, req.split, "all", mode));
    Ok(reports)
}

fn eval_chunk(
    req: &EvalRequest,
    windows: &[Window],
    horizon_idx: &[usize],
) -> Result<LabelAccumulators, EvalError> {
    let config = req.model.config();
    let past = config.past_frames;
    let root = req.model.skeleton().root;
    let coord_width = req.model.skeleton().joint_count() * 3;
    let dims = req.model.frame_dims();
    let batch = assemble_batch(req.trajs, windows, past, req.future)?;

    let mut g = crate::autodiff::Graph::new();
    let fwd = req.model.forward(&mut g, req.params, &batch.kp2d, batch.size, req.future, RunMode::eval())?;
    let out = g.value(fwd.output());
    let has_future = fwd.future_steps > 0;
    let b = batch.size;

    let coord_of = |row: &[f64]| CoordPose::from_flat(&row[..coord_width], root);
    let lie_of = |row: &[f64]| LiePose::from_flat(&row[coord_width..dims], root);

    let mut map = LabelAccumulators::new();
    for (bi, w) in windows.iter().enumerate() {
        let acc = map.entry(req.trajs[w.traj].label.clone()).or_default();
        // Pose estimation metrics over the observed span; `mpjpe` and
        // `p_mpjpe` already report millimeters for meter-scale inputs.
        for t in 0..past {
            let row = |tensor: &crate::autodiff::Tensor| {
                let r = t * b + bi;
                tensor.data()[r * dims..(r + 1) * dims].to_vec()
            };
            let pred = coord_of(&row(out));
            let gt = coord_of(&row(&batch.gt_past));
            acc.add_pose_errors(mpjpe(&pred, &gt)?, p_mpjpe(&pred, &gt)?);
        }
        // Future-motion metrics at each horizon, plus the zero-velocity
        // baseline seeded from the last observed ground-truth pose.
        let seed_row = (past - 1) * b + bi;
        let zv_pose = lie_of(&batch.gt_past.data()[seed_row * dims..(seed_row + 1) * dims]);
        let mut mae_row = [0.0; HORIZONS_MS.len()];
        let mut zv_row = [0.0; HORIZONS_MS.len()];
        for (i, &frames) in horizon_idx.iter().enumerate() {
            let k = frames - 1;
            let pred_row = if has_future {
                let r = (past + k) * b + bi;
                out.data()[r * dims..(r + 1) * dims].to_vec()
            } else {
                // Without a motion decoder the model holds its last
                // estimate, which is its own zero-velocity prediction.
                let r = (past - 1) * b + bi;
                out.data()[r * dims..(r + 1) * dims].to_vec()
            };
            let gt_row = {
                let r = k * b + bi;
                batch.gt_future.data()[r * dims..(r + 1) * dims].to_vec()
            };
            let pred_pose = lie_of(&pred_row);
            let gt_pose = lie_of(&gt_row);
            mae_row[i] = mae(&pred_pose, &gt_pose, root, config.mae_mode)?;
            zv_row[i] = mae(&zv_pose, &gt_pose, root, config.mae_mode)?;
        }
        acc.add_horizon_errors(&mae_row, &zv_row);
        acc.mark_window();
    }
    Ok(map)
}

/// Renders reports as CSV with a header line.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = MetricReport::csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::data::make_windows;
    use crate::skeleton::Skeleton;
    use crate::synth::{project_2d, synth_dataset, Camera, MotionKind};
    use std::sync::Arc;

    fn dataset(kinds: &[MotionKind], n: usize, seed: u64) -> Vec<Trajectory> {
        let camera = Camera::default();
        synth_dataset(kinds, n, 40, seed)
            .unwrap()
            .iter()
            .map(|t| project_2d(t, &camera, 2.0, seed).unwrap())
            .collect()
    }

    fn toy_model(mut config: Config) -> (PoseMoNet, ParamSet) {
        config.past_frames = 9;
        config.hidden = 8;
        config.seed = 5;
        let model = PoseMoNet::new(config, Arc::new(Skeleton::default_h36m16()));
        let params = model.init_params().unwrap();
        (model, params)
    }

    #[test]
    fn reports_cover_labels_and_aggregate() {
        let trajs = dataset(&[MotionKind::Walk, MotionKind::Wave], 6, 1);
        let (model, params) = toy_model(Config::default());
        let windows = make_windows(&trajs, 9, 25, 10, 1.0, 7);
        let req = EvalRequest {
            model: &model,
            params: &params,
            trajs: &trajs,
            windows: &windows.train,
            future: 25,
            run_id: "test",
            split: "train",
            threads: 1,
        };
        let reports = evaluate(&req).unwrap();
        let labels: Vec<_> = reports.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["walk", "wave", "all"]);
        let total: usize = reports[..2].iter().map(|r| r.windows).sum();
        assert_eq!(reports[2].windows, total);
        for r in &reports {
            assert!(r.p_mpjpe_mm <= r.mpjpe_mm + 1e-9, "{}: P-MPJPE above MPJPE", r.label);
            assert!(r.mpjpe_mm.is_finite());
            assert!(r.mae_per_horizon.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let trajs = dataset(&[MotionKind::Walk, MotionKind::Squat], 8, 2);
        let (model, params) = toy_model(Config::default());
        let windows = make_windows(&trajs, 9, 25, 5, 1.0, 7);
        assert!(windows.train.len() > CHUNK, "need multiple chunks");
        let run = |threads: usize| {
            let req = EvalRequest {
                model: &model,
                params: &params,
                trajs: &trajs,
                windows: &windows.train,
                future: 25,
                run_id: "t",
                split: "train",
                threads,
            };
            reports_to_csv(&evaluate(&req).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3), "thread count changed the report bytes");
        assert_eq!(one, run(8));
    }

    #[test]
    fn zero_velocity_is_exact_on_static_motion() {
        let trajs = dataset(&[MotionKind::Static], 3, 3);
        let (model, params) = toy_model(Config::default());
        let windows = make_windows(&trajs, 9, 25, 10, 1.0, 7);
        let req = EvalRequest {
            model: &model,
            params: &params,
            trajs: &trajs,
            windows: &windows.train,
            future: 25,
            run_id: "t",
            split: "train",
            threads: 1,
        };
        let reports = evaluate(&req).unwrap();
        let all = reports.last().unwrap();
        for (i, &zv) in all.zv_mae_per_horizon.iter().enumerate() {
            assert!(zv < 1e-12, "zv mae at {}ms: {zv}", HORIZONS_MS[i]);
        }
    }

    #[test]
    fn no_mgn_models_fall_back_to_held_pose() {
        let mut config = Config::default();
        config.no_mgn = true;
        let trajs = dataset(&[MotionKind::Walk], 3, 4);
        let (model, params) = toy_model(config);
        let windows = make_windows(&trajs, 9, 25, 10, 1.0, 7);
        let req = EvalRequest {
            model: &model,
            params: &params,
            trajs: &trajs,
            windows: &windows.train,
            future: 25,
            run_id: "t",
            split: "train",
            threads: 1,
        };
        let reports = evaluate(&req).unwrap();
        assert!(reports.iter().all(|r| r.mae_per_horizon.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let trajs = dataset(&[MotionKind::Wave], 4, 5);
        let (model, params) = toy_model(Config::default());
        let windows = make_windows(&trajs, 9, 25, 10, 1.0, 7);
        let req = EvalRequest {
            model: &model,
            params: &params,
            trajs: &trajs,
            windows: &windows.train,
            future: 25,
            run_id: "t",
            split: "train",
            threads: 0,
        };
        let a = reports_to_csv(&evaluate(&req).unwrap());
        let b = reports_to_csv(&evaluate(&req).unwrap());
        assert_eq!(a, b);
    }
}
