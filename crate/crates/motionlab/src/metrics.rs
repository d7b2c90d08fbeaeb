//! Evaluation metrics for pose estimation and motion prediction.
//!
//! * [`mpjpe`]: mean per-joint position error in millimeters.
//! * [`p_mpjpe`]: MPJPE after closed-form similarity (Procrustes) alignment
//!   of the prediction to the ground truth.
//! * [`mae`]: mean angle error, the Euclidean norm of the stacked per-joint
//!   rotation-parameter differences (root excluded). The default compares
//!   canonicalized axis-angle vectors; [`MaeMode::Euler`] compares intrinsic
//!   Z-Y-X Euler angles instead.
//! * [`zero_velocity`]: the standard frozen-pose prediction baseline.
//!
//! Future-motion metrics are reported at fixed millisecond horizons mapped
//! onto frames through the sequence frame rate.

use crate::lie::rodrigues;
use crate::pose::{CoordPose, LiePose};
use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Evaluation horizons in milliseconds.
pub const HORIZONS_MS: [u32; 8] = [80, 160, 320, 400, 560, 640, 720, 1000];

/// Longest horizon in frames at the given frame rate.
pub fn max_horizon_frames(frame_rate: f64) -> usize {
    HORIZONS_MS
        .iter()
        .map(|&ms| horizon_frames(ms, frame_rate, usize::MAX).unwrap_or(0))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("LENGTH_MISMATCH: pred has {pred} entries, gt has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("DEGENERATE_CONFIGURATION: fewer than 3 non-collinear joints")]
    DegenerateConfiguration,
    #[error("HORIZON_OUT_OF_RANGE: {ms} ms is not a frame multiple at {frame_rate} Hz or exceeds {available} future frames")]
    HorizonOutOfRange {
        ms: u32,
        frame_rate: f64,
        available: usize,
    },
    #[error("NONFINITE_INPUT: non-finite value in {context}")]
    NonFiniteInput { context: &'static str },
}

/// Which rotation parameterization [`mae`] compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaeMode {
    #[default]
    Omega,
    Euler,
}

impl std::fmt::Display for MaeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaeMode::Omega => write!(f, "omega"),
            MaeMode::Euler => write!(f, "euler"),
        }
    }
}

impl std::str::FromStr for MaeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "omega" => Ok(MaeMode::Omega),
            "euler" => Ok(MaeMode::Euler),
            other => Err(format!("unknown mae_mode '{other}' (omega|euler)")),
        }
    }
}

fn check_len(pred: usize, gt: usize) -> Result<(), MetricsError> {
    if pred != gt {
        return Err(MetricsError::LengthMismatch { pred, gt });
    }
    Ok(())
}

/// Mean per-joint position error in millimeters (poses are in meters).
pub fn mpjpe(pred: &CoordPose, gt: &CoordPose) -> Result<f64, MetricsError> {
    check_len(pred.joint_count(), gt.joint_count())?;
    let n = pred.joint_count() as f64;
    let sum: f64 = pred
        .joints()
        .iter()
        .zip(gt.joints().iter())
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / n * 1000.0)
}

/// The similarity transform `y ~ s R x + t` found by Procrustes alignment.
#[derive(Debug, Clone)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::from(*p) * self.scale + self.translation;
        [v.x, v.y, v.z]
    }
}

/// Closed-form least-squares similarity alignment of `pred` onto `gt`
/// (Umeyama's method). The returned rotation always has determinant +1 and
/// the scale is positive for non-degenerate input.
///
/// Fails with `DegenerateConfiguration` when either pose has fewer than 3
/// joints or its joints are collinear, which leaves the rotation
/// underdetermined.
pub fn procrustes_align(pred: &CoordPose, gt: &CoordPose) -> Result<Similarity, MetricsError> {
    check_len(pred.joint_count(), gt.joint_count())?;
    let n = pred.joint_count();
    if n < 3 {
        return Err(MetricsError::DegenerateConfiguration);
    }
    if !pred.is_finite() || !gt.is_finite() {
        return Err(MetricsError::NonFiniteInput {
            context: "procrustes_align poses",
        });
    }
    let mean = |pose: &CoordPose| -> Vector3<f64> {
        let mut m = Vector3::zeros();
        for p in pose.joints() {
            m += Vector3::from(*p);
        }
        m / n as f64
    };
    let x_bar = mean(pred);
    let y_bar = mean(gt);
    let mut h = Matrix3::zeros();
    let mut x_var = 0.0;
    for (p, g) in pred.joints().iter().zip(gt.joints().iter()) {
        let xc = Vector3::from(*p) - x_bar;
        let yc = Vector3::from(*g) - y_bar;
        h += xc * yc.transpose();
        x_var += xc.norm_squared();
    }
    if x_var < 1e-18 {
        return Err(MetricsError::DegenerateConfiguration);
    }
    let svd = nalgebra::SVD::new(h, true, true);
    let u = svd.u.ok_or(MetricsError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(MetricsError::DegenerateConfiguration)?;
    let sigma = svd.singular_values;
    // Collinear joints leave only one significant singular value and an
    // underdetermined rotation.
    let s_max = sigma.max();
    let mut sorted: Vec<f64> = sigma.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[1] <= s_max * 1e-9 {
        return Err(MetricsError::DegenerateConfiguration);
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // Reflection correction applies to the direction of the smallest
    // singular value.
    let min_idx = (0..3)
        .min_by(|&a, &b| sigma[a].partial_cmp(&sigma[b]).unwrap())
        .unwrap();
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[min_idx] = d;
    let rotation = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let trace_ds: f64 = (0..3).map(|i| sigma[i] * diag[i]).sum();
    let scale = trace_ds / x_var;
    let translation = y_bar - rotation * x_bar * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// MPJPE in millimeters after Procrustes alignment of `pred` onto `gt`.
///
/// Always at most [`mpjpe`] (the identity transform is in the search space).
pub fn p_mpjpe(pred: &CoordPose, gt: &CoordPose) -> Result<f64, MetricsError> {
    let sim = procrustes_align(pred, gt)?;
    let aligned: Vec<[f64; 3]> = pred.joints().iter().map(|p| sim.apply(p)).collect();
    let n = pred.joint_count() as f64;
    let sum: f64 = aligned
        .iter()
        .zip(gt.joints().iter())
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / n * 1000.0)
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    } else if x < -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    }
    x
}

/// Intrinsic Z-Y-X Euler angles (roll, pitch, yaw) of the rotation generated
/// by `omega`.
fn euler_of_omega(omega: &Vector3<f64>) -> [f64; 3] {
    let r = Rotation3::from_matrix_unchecked(rodrigues(omega));
    let (roll, pitch, yaw) = r.euler_angles();
    [roll, pitch, yaw]
}

/// Mean angle error between two Lie poses at one frame.
///
/// Both poses are canonicalized, the root joint is excluded, and the
/// per-joint rotation-parameter differences are stacked into one vector
/// whose Euclidean norm is returned (radians). `MaeMode::Omega` compares
/// axis-angle vectors; `MaeMode::Euler` compares Z-Y-X Euler angles with
/// each difference wrapped to `[-pi, pi]`.
pub fn mae(
    pred: &LiePose,
    gt: &LiePose,
    root: usize,
    mode: MaeMode,
) -> Result<f64, MetricsError> {
    check_len(pred.joint_count(), gt.joint_count())?;
    let canon = |p: &LiePose| {
        p.canonicalized().map_err(|_| MetricsError::NonFiniteInput {
            context: "mae pose",
        })
    };
    let pred = canon(pred)?;
    let gt = canon(gt)?;
    let mut sum_sq = 0.0;
    for j in 0..pred.joint_count() {
        if j == root {
            continue;
        }
        match mode {
            MaeMode::Omega => {
                let d = pred.twist(j).omega - gt.twist(j).omega;
                sum_sq += d.norm_squared();
            }
            MaeMode::Euler => {
                let ep = euler_of_omega(&pred.twist(j).omega);
                let eg = euler_of_omega(&gt.twist(j).omega);
                for k in 0..3 {
                    sum_sq += wrap_angle(ep[k] - eg[k]).powi(2);
                }
            }
        }
    }
    Ok(sum_sq.sqrt())
}

/// Zero-velocity baseline: predicts the seed pose for all `k` future frames.
pub fn zero_velocity(seed: &LiePose, k: usize) -> Vec<LiePose> {
    vec![seed.clone(); k]
}

/// Maps a millisecond horizon to a 1-based future frame index.
///
/// Fails when the horizon is not a whole number of frames at `frame_rate` or
/// reaches past `available` future frames.
pub fn horizon_frames(ms: u32, frame_rate: f64, available: usize) -> Result<usize, MetricsError> {
    let frames_exact = ms as f64 * frame_rate / 1000.0;
    let frames = frames_exact.round() as usize;
    let err = MetricsError::HorizonOutOfRange {
        ms,
        frame_rate,
        available,
    };
    if (frames_exact - frames as f64).abs() > 1e-9 || frames == 0 {
        return Err(err);
    }
    if frames > available {
        return Err(err);
    }
    Ok(frames)
}

/// Aggregated evaluation results for one run/split/label combination.
///
/// `mae_per_horizon` and `zv_mae_per_horizon` are indexed like
/// [`HORIZONS_MS`]; `zv` columns hold the zero-velocity baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub split: String,
    pub label: String,
    pub windows: usize,
    pub mae_mode: MaeMode,
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub mae_per_horizon: Vec<f64>,
    pub zv_mae_per_horizon: Vec<f64>,
}

impl MetricReport {
    pub fn csv_header() -> String {
        let mut cols = vec![
            "run_id".to_string(),
            "split".to_string(),
            "label".to_string(),
            "windows".to_string(),
            "mpjpe_mm".to_string(),
            "p_mpjpe_mm".to_string(),
            "mae_mode".to_string(),
        ];
        for ms in HORIZONS_MS {
            cols.push(format!("mae@{ms}ms"));
        }
        for ms in HORIZONS_MS {
            cols.push(format!("zv_mae@{ms}ms"));
        }
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            self.run_id.clone(),
            self.split.clone(),
            self.label.clone(),
            self.windows.to_string(),
            format_metric(self.mpjpe_mm),
            format_metric(self.p_mpjpe_mm),
            self.mae_mode.to_string(),
        ];
        for &v in &self.mae_per_horizon {
            cols.push(format_metric(v));
        }
        for &v in &self.zv_mae_per_horizon {
            cols.push(format_metric(v));
        }
        cols.join(",")
    }
}

/// Fixed-precision metric formatting keeps CSV output byte-stable.
pub fn format_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.9}")
    }
}

/// Incremental mean accumulator for building a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    pub windows: usize,
    mpjpe_sum: f64,
    mpjpe_count: usize,
    p_mpjpe_sum: f64,
    p_mpjpe_count: usize,
    mae_sum: Vec<f64>,
    zv_mae_sum: Vec<f64>,
    horizon_count: usize,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        MetricAccumulator {
            windows: 0,
            mpjpe_sum: 0.0,
            mpjpe_count: 0,
            p_mpjpe_sum: 0.0,
            p_mpjpe_count: 0,
            mae_sum: vec![0.0; HORIZONS_MS.len()],
            zv_mae_sum: vec![0.0; HORIZONS_MS.len()],
            horizon_count: 0,
        }
    }

    pub fn add_pose_errors(&mut self, mpjpe_mm: f64, p_mpjpe_mm: f64) {
        self.mpjpe_sum += mpjpe_mm;
        self.mpjpe_count += 1;
        self.p_mpjpe_sum += p_mpjpe_mm;
        self.p_mpjpe_count += 1;
    }

    /// Adds one window's per-horizon MAE values (model and zero-velocity).
    pub fn add_horizon_errors(&mut self, mae: &[f64], zv: &[f64]) {
        assert_eq!(mae.len(), HORIZONS_MS.len());
        assert_eq!(zv.len(), HORIZONS_MS.len());
        for i in 0..HORIZONS_MS.len() {
            self.mae_sum[i] += mae[i];
            self.zv_mae_sum[i] += zv[i];
        }
        self.horizon_count += 1;
    }

    pub fn mark_window(&mut self) {
        self.windows += 1;
    }

    /// Fold another accumulator into this one (used by parallel evaluation).
    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.windows += other.windows;
        self.mpjpe_sum += other.mpjpe_sum;
        self.mpjpe_count += other.mpjpe_count;
        self.p_mpjpe_sum += other.p_mpjpe_sum;
        self.p_mpjpe_count += other.p_mpjpe_count;
        for i in 0..HORIZONS_MS.len() {
            self.mae_sum[i] += other.mae_sum[i];
            self.zv_mae_sum[i] += other.zv_mae_sum[i];
        }
        self.horizon_count += other.horizon_count;
    }

    pub fn finalize(
        &self,
        run_id: &str,
        split: &str,
        label: &str,
        mae_mode: MaeMode,
    ) -> MetricReport {
        let div = |sum: f64, count: usize| {
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        };
        let report = MetricReport {
            run_id: run_id.to_string(),
            split: split.to_string(),
            label: label.to_string(),
            windows: self.windows,
            mae_mode,
            mpjpe_mm: div(self.mpjpe_sum, self.mpjpe_count),
            p_mpjpe_mm: div(self.p_mpjpe_sum, self.p_mpjpe_count),
            mae_per_horizon: self
                .mae_sum
                .iter()
                .map(|&s| div(s, self.horizon_count))
                .collect(),
            zv_mae_per_horizon: self
                .zv_mae_sum
                .iter()
                .map(|&s| div(s, self.horizon_count))
                .collect(),
        };
        // Alignment minimizes the summed squared error, which almost
        // always lowers the mean joint error too; it is not a hard
        // guarantee, so this is a report field, not an assertion.
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Twist;
    use crate::skeleton::Skeleton;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_pose(rng: &mut ChaCha8Rng) -> CoordPose {
        let pts = (0..16)
            .map(|_| {
                [
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                ]
            })
            .collect();
        CoordPose::from_joints(pts, 0)
    }

    #[test]
    fn mpjpe_of_uniform_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let gt = random_pose(&mut rng);
        let shifted: Vec<[f64; 3]> = gt
            .joints()
            .iter()
            .map(|p| [p[0] + 0.01, p[1], p[2]])
            .collect();
        // Shift before recentering: compare raw joint arrays instead.
        let pred = CoordPose::from_joints(shifted, 0);
        // Recentring removes a uniform shift entirely.
        assert!((mpjpe(&pred, &gt).unwrap()).abs() < 1e-12);
        // A shift of a single non-root joint by 10 mm contributes 10/16 mm.
        let mut moved = gt.joints().to_vec();
        moved[5][0] += 0.01;
        let pred = CoordPose::from_joints(moved, 0);
        assert!((mpjpe(&pred, &gt).unwrap() - 10.0 / 16.0).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_rejects_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let gt = random_pose(&mut rng);
        let pred = CoordPose::from_joints(vec![[0.0; 3]; 12], 0);
        assert!(matches!(
            mpjpe(&pred, &gt).unwrap_err(),
            MetricsError::LengthMismatch { pred: 12, gt: 16 }
        ));
    }

    #[test]
    fn procrustes_recovers_similarity_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let omega = Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            );
            let r = rodrigues(&omega);
            let s = 0.5 + rng.gen::<f64>() * 1.5;
            let t = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            // pred = inverse-similarity image of gt, so alignment recovers gt.
            let pred_pts: Vec<[f64; 3]> = gt
                .joints()
                .iter()
                .map(|p| {
                    let v = r.transpose() * (Vector3::from(*p) - t) / s;
                    [v.x, v.y, v.z]
                })
                .collect();
            let pred = CoordPose::from_joints(pred_pts, 0);
            let err = p_mpjpe(&pred, &gt).unwrap();
            assert!(err < 1e-6, "residual {err} mm");
            let sim = procrustes_align(&pred, &gt).unwrap();
            assert!((sim.rotation.determinant() - 1.0).abs() < 1e-9);
            assert!(sim.scale > 0.0);
        }
    }

    #[test]
    fn p_mpjpe_never_exceeds_mpjpe() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..200 {
            let gt = random_pose(&mut rng);
            let pred = random_pose(&mut rng);
            let a = mpjpe(&pred, &gt).unwrap();
            let p = p_mpjpe(&pred, &gt).unwrap();
            assert!(p <= a + 1e-9, "p {p} > mpjpe {a}");
        }
    }

    #[test]
    fn procrustes_matches_planar_grid_search() {
        // A planar 4-point toy where the optimum can be found by brute
        // force over (angle, scale) with closed-form translation.
        let gt_pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let pred_pts = vec![
            [0.05, -0.02, 0.0],
            [0.55, 0.08, 0.0],
            [0.45, 0.62, 0.0],
            [-0.05, 0.52, 0.0],
        ];
        let n = 4.0;
        // Residuals at a given in-plane rotation and scale, with the
        // translation set to its closed-form optimum (centroid match). The
        // first value is the least-squares objective the alignment
        // minimizes, the second the resulting mean distance in mm.
        let residual = |angle: f64, scale: f64| -> (f64, f64) {
            let (s, c) = angle.sin_cos();
            let rot: Vec<[f64; 2]> = pred_pts
                .iter()
                .map(|p| {
                    [
                        scale * (c * p[0] - s * p[1]),
                        scale * (s * p[0] + c * p[1]),
                    ]
                })
                .collect();
            let mean_r = rot.iter().fold([0.0; 2], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
            let mean_g = gt_pts
                .iter()
                .fold([0.0; 2], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
            let mut ssq = 0.0;
            let mut mean_dist = 0.0;
            for (p, g) in rot.iter().zip(gt_pts.iter()) {
                let dx = p[0] - mean_r[0] - (g[0] - mean_g[0]);
                let dy = p[1] - mean_r[1] - (g[1] - mean_g[1]);
                let d2 = dx * dx + dy * dy;
                ssq += d2;
                mean_dist += d2.sqrt() / n * 1000.0;
            }
            (ssq, mean_dist)
        };
        let mut best_ssq = f64::INFINITY;
        let mut best_mpjpe = f64::INFINITY;
        let mut angle = -0.6;
        while angle <= 0.6 {
            let mut scale = 1.2;
            while scale <= 2.8 {
                let (ssq, mean_dist) = residual(angle, scale);
                if ssq < best_ssq {
                    best_ssq = ssq;
                    best_mpjpe = mean_dist;
                }
                scale += 0.0005;
            }
            angle += 0.0005;
        }
        let gt = CoordPose::from_joints(gt_pts.clone(), 0);
        let pred = CoordPose::from_joints(pred_pts.clone(), 0);
        let sim = procrustes_align(&pred, &gt).unwrap();
        let closed_ssq: f64 = pred
            .joints()
            .iter()
            .zip(gt.joints().iter())
            .map(|(p, g)| {
                let a = sim.apply(p);
                (0..3).map(|k| (a[k] - g[k]).powi(2)).sum::<f64>()
            })
            .sum();
        // The closed form optimizes the same objective the grid scans.
        assert!(closed_ssq <= best_ssq + 1e-12, "grid beat the closed form");
        let closed = p_mpjpe(&pred, &gt).unwrap();
        assert!(
            (closed - best_mpjpe).abs() < 0.01,
            "closed-form {closed} vs grid {best_mpjpe}"
        );
    }

    #[test]
    fn procrustes_rejects_collinear_points() {
        let pts: Vec<[f64; 3]> = (0..16).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let line = CoordPose::from_joints(pts, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let gt = random_pose(&mut rng);
        assert!(matches!(
            procrustes_align(&line, &gt).unwrap_err(),
            MetricsError::DegenerateConfiguration
        ));
    }

    #[test]
    fn mae_single_joint_offset() {
        // gt has joint 5 rotated 0.3 rad about x; pred rotates it 0.5 rad
        // about the same axis. Every other joint agrees, so the stacked
        // difference norm is exactly 0.2 in both parameterizations.
        let mut gt_twists = vec![Twist::zero(); 16];
        gt_twists[5] = Twist::new([0.3, 0.0, 0.0], [0.1, 0.0, 0.0]);
        let gt = LiePose::from_twists(gt_twists.clone(), 0);
        let mut pred_twists = gt_twists;
        pred_twists[5] = Twist::new([0.5, 0.0, 0.0], [0.1, 0.0, 0.0]);
        let pred = LiePose::from_twists(pred_twists, 0);
        let err = mae(&pred, &gt, 0, MaeMode::Omega).unwrap();
        assert!((err - 0.2).abs() < 1e-9, "mae {err}");
        // A rotation purely about x maps to the Euler roll angle.
        let err_euler = mae(&pred, &gt, 0, MaeMode::Euler).unwrap();
        assert!((err_euler - 0.2).abs() < 1e-9, "euler mae {err_euler}");
    }

    #[test]
    fn mae_canonicalizes_before_comparing() {
        let skeleton = Skeleton::default_h36m16();
        let zero = LiePose::from_twists(vec![Twist::zero(); 16], 0);
        let mut twists = vec![Twist::zero(); 16];
        // A full extra turn is the same rotation: canonicalization removes it.
        twists[3] = Twist::new([2.0 * PI + 0.1, 0.0, 0.0], [0.0, 0.0, 0.0]);
        let pred = LiePose::from_twists(twists, 0);
        let err = mae(&pred, &zero, skeleton.root, MaeMode::Omega).unwrap();
        assert!((err - 0.1).abs() < 1e-9, "mae {err}");
    }

    #[test]
    fn zero_velocity_repeats_seed() {
        let mut twists = vec![Twist::zero(); 16];
        twists[2] = Twist::new([0.0, 0.3, 0.0], [0.1, 0.0, 0.0]);
        let seed = LiePose::from_twists(twists, 0);
        let pred = zero_velocity(&seed, 5);
        assert_eq!(pred.len(), 5);
        for p in &pred {
            assert_eq!(p, &seed);
        }
    }

    #[test]
    fn horizon_mapping_at_25hz() {
        let expect = [2, 4, 8, 10, 14, 16, 18, 25];
        for (ms, frames) in HORIZONS_MS.iter().zip(expect.iter()) {
            assert_eq!(horizon_frames(*ms, 25.0, 25).unwrap(), *frames);
        }
        assert!(matches!(
            horizon_frames(90, 25.0, 25),
            Err(MetricsError::HorizonOutOfRange { .. })
        ));
        assert!(matches!(
            horizon_frames(1000, 25.0, 20),
            Err(MetricsError::HorizonOutOfRange { .. })
        ));
    }

    #[test]
    fn report_csv_shape() {
        let mut acc = MetricAccumulator::new();
        acc.add_pose_errors(42.0, 30.0);
        acc.add_horizon_errors(&[0.1; 8], &[0.2; 8]);
        acc.mark_window();
        let report = acc.finalize("run1", "test", "walk", MaeMode::Omega);
        let header = MetricReport::csv_header();
        let row = report.to_csv_row();
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(header.contains("mae@1000ms"));
        assert!(header.contains("zv_mae@80ms"));
        assert!(row.starts_with("run1,test,walk,1,"));
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let samples: Vec<(f64, f64)> = (0..10)
            .map(|_| {
                let a = rng.gen::<f64>() * 100.0;
                (a, a * rng.gen::<f64>())
            })
            .collect();
        let mut whole = MetricAccumulator::new();
        let mut left = MetricAccumulator::new();
        let mut right = MetricAccumulator::new();
        for (i, &(m, p)) in samples.iter().enumerate() {
            whole.add_pose_errors(m, p);
            if i < 5 {
                left.add_pose_errors(m, p);
            } else {
                right.add_pose_errors(m, p);
            }
        }
        left.merge(&right);
        let a = whole.finalize("r", "s", "l", MaeMode::Omega);
        let b = left.finalize("r", "s", "l", MaeMode::Omega);
        assert_eq!(a.mpjpe_mm, b.mpjpe_mm);
        assert_eq!(a.p_mpjpe_mm, b.p_mpjpe_mm);
    }
}
