//! Synthetic articulated motion and pinhole camera projection.
//!
//! Motion is generated from per-joint angle programs (sinusoids per
//! motion kind) and converted through forward kinematics, so every frame
//! is kinematically exact: stored coordinates, stored twists, and bone
//! lengths agree to machine precision. Trajectories carry an absolute
//! root path used only for projecting to 2D keypoints; training consumes
//! root-relative poses.

use crate::data::{Frame, Trajectory};
use crate::lie::left_jacobian_inv;
use crate::pose::{forward_kinematics, LiePose, LIE_DIMS};
use crate::skeleton::Skeleton;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Minimum trajectory length the generator accepts.
pub const MIN_FRAMES: usize = 30;
/// Frame rate of all synthetic motion, in Hz.
pub const FRAME_RATE: f64 = 25.0;
/// Default detector-noise standard deviation, in pixels.
pub const DEFAULT_NOISE_PX: f64 = 3.0;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("BEHIND_CAMERA: joint projects from camera depth {z:.6} (must be positive)")]
    BehindCamera { z: f64 },
    #[error("TOO_SHORT: requested {got} frames, the generator needs at least {MIN_FRAMES}")]
    TooShort { got: usize },
    #[error("MISSING_ROOT: trajectory frame {frame} has no absolute root position")]
    MissingRoot { frame: usize },
    #[error("BAD_CAMERA: {0}")]
    BadCamera(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

/// A pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal lengths `(fx, fy)` in pixels.
    pub focal: [f64; 2],
    /// Principal point `(cx, cy)` in pixels.
    pub principal: [f64; 2],
    /// Image extent `(width, height)` in pixels.
    pub image_size: [f64; 2],
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
}

impl Default for Camera {
    /// A camera four meters in front of the subject at chest height,
    /// looking back at the origin with image y pointing down.
    fn default() -> Self {
        Camera {
            focal: [1000.0, 1000.0],
            principal: [500.0, 500.0],
            image_size: [1000.0, 1000.0],
            rotation: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            translation: [0.0, 1.0, 4.0],
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.focal[0] <= 0.0 || self.focal[1] <= 0.0 {
            return Err(SynthError::BadCamera(format!(
                "focal lengths must be positive, got {:?}",
                self.focal
            )));
        }
        let [cx, cy] = self.principal;
        let [w, h] = self.image_size;
        if !(0.0..=w).contains(&cx) || !(0.0..=h).contains(&cy) {
            return Err(SynthError::BadCamera(format!(
                "principal point {:?} outside image {:?}",
                self.principal, self.image_size
            )));
        }
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let err = (r * r.transpose() - Matrix3::identity()).norm();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadCamera(format!(
                "rotation is not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project_pixel(&self, p_cam: [f64; 3]) -> Result<[f64; 2], SynthError> {
        let [x, y, z] = p_cam;
        if z <= 1e-9 {
            return Err(SynthError::BehindCamera { z });
        }
        Ok([
            self.focal[0] * x / z + self.principal[0],
            self.focal[1] * y / z + self.principal[1],
        ])
    }

    /// Maps pixel coordinates to [-1, 1] by the image half-extent.
    pub fn normalize_pixel(&self, pixel: [f64; 2]) -> [f64; 2] {
        let [w, h] = self.image_size;
        [
            (pixel[0] - w / 2.0) / (w / 2.0),
            (pixel[1] - h / 2.0) / (h / 2.0),
        ]
    }

    /// Full chain: world point to normalized image coordinates.
    pub fn project_normalized(&self, p_world: [f64; 3]) -> Result<[f64; 2], SynthError> {
        let pixel = self.project_pixel(self.world_to_camera(p_world))?;
        Ok(self.normalize_pixel(pixel))
    }
}

pub fn write_camera(camera: &Camera, path: impl AsRef<Path>) -> Result<(), SynthError> {
    let text = serde_json::to_string_pretty(camera).expect("camera serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera, SynthError> {
    let text = std::fs::read_to_string(path)?;
    let camera: Camera =
        serde_json::from_str(&text).map_err(|e| SynthError::BadCamera(e.to_string()))?;
    camera.validate()?;
    Ok(camera)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    Wave,
    Squat,
    Static,
    Mixed,
}

impl MotionKind {
    pub const ALL: [MotionKind; 5] = [
        MotionKind::Walk,
        MotionKind::Wave,
        MotionKind::Squat,
        MotionKind::Static,
        MotionKind::Mixed,
    ];
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Walk => "walk",
            MotionKind::Wave => "wave",
            MotionKind::Squat => "squat",
            MotionKind::Static => "static",
            MotionKind::Mixed => "mixed",
        })
    }
}

impl FromStr for MotionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "walk" => Ok(MotionKind::Walk),
            "wave" => Ok(MotionKind::Wave),
            "squat" => Ok(MotionKind::Squat),
            "static" => Ok(MotionKind::Static),
            "mixed" => Ok(MotionKind::Mixed),
            other => Err(format!("unknown motion kind {other:?}, expected walk|wave|squat|static|mixed")),
        }
    }
}

/// Local bone direction of every joint in its parent's frame at rest:
/// torso and head point up, legs and lower arms hang down, lateral
/// offsets split left (+x) and right (-x). The subject faces +z.
pub fn rest_offsets(skeleton: &Skeleton) -> Vec<Vector3<f64>> {
    let dir = |j: usize| -> Vector3<f64> {
        match j {
            1 | 2 | 3 => Vector3::new(0.0, 1.0, 0.0),
            4 | 10 => Vector3::new(1.0, 0.0, 0.0),
            7 | 13 => Vector3::new(-1.0, 0.0, 0.0),
            _ => Vector3::new(0.0, -1.0, 0.0),
        }
    };
    (0..skeleton.joint_count())
        .map(|j| dir(j) * skeleton.bone_lengths[j])
        .collect()
}

/// Builds the joint-twist pose for one frame of articulation angles. Each
/// joint's rotation vector articulates its descendants; the bone offset is
/// the constant rest vector, so bone lengths never change.
pub fn pose_from_angles(skeleton: &Skeleton, rest: &[Vector3<f64>], angles: &[[f64; 3]]) -> LiePose {
    let n = skeleton.joint_count();
    let mut flat = vec![0.0; n * LIE_DIMS];
    for j in 0..n {
        if j == skeleton.root {
            continue;
        }
        let omega = Vector3::from(angles[j]);
        let nu = left_jacobian_inv(&omega) * rest[j];
        let row = &mut flat[j * LIE_DIMS..(j + 1) * LIE_DIMS];
        row[..3].copy_from_slice(omega.as_slice());
        row[3..].copy_from_slice(nu.as_slice());
    }
    LiePose::from_flat(&flat, skeleton.root)
}

/// Per-frame angle program: maps local time to 16 articulation vectors
/// plus the absolute root position.
type Program = Box<dyn Fn(f64) -> ([[f64; 3]; 16], [f64; 3])>;

fn walk_program(rng: &mut ChaCha8Rng) -> Program {
    let freq = rng.gen_range(0.55..0.85);
    let hip_amp = rng.gen_range(0.5..0.75);
    let knee_amp = rng.gen_range(0.6..1.0);
    let arm_amp = rng.gen_range(0.3..0.5);
    let phase0 = rng.gen_range(0.0..TAU);
    // Cadence wobble: nobody walks to a metronome. The slow phase
    // modulation also keeps held-pose baselines from looking perfect
    // whenever a horizon happens to match the gait period.
    let wobble_amp = rng.gen_range(0.5..1.0);
    let wobble_freq = rng.gen_range(0.15..0.35);
    let wobble_phase = rng.gen_range(0.0..TAU);
    let drift_amp = rng.gen_range(0.5..0.9);
    let drift_freq = rng.gen_range(0.03..0.06);
    let z0 = rng.gen_range(-0.2..0.2);
    Box::new(move |t| {
        let phi = TAU * freq * t + phase0 + wobble_amp * (TAU * wobble_freq * t + wobble_phase).sin();
        let mut a = [[0.0; 3]; 16];
        // Sagittal leg swing, anti-phase left/right.
        a[4][0] = hip_amp * phi.sin();
        a[7][0] = hip_amp * (phi + std::f64::consts::PI).sin();
        // Knee flexion, anti-phase by half a cycle.
        a[5][0] = knee_amp * (1.0 - phi.cos()) / 2.0;
        a[8][0] = knee_amp * (1.0 - (phi + std::f64::consts::PI).cos()) / 2.0;
        // Arms counter-swing their ipsilateral leg.
        a[10][0] = arm_amp * (phi + std::f64::consts::PI).sin();
        a[13][0] = arm_amp * phi.sin();
        // Small torso sway and twist.
        a[1][2] = 0.05 * phi.sin();
        a[2][1] = 0.08 * phi.sin();
        let root = [
            drift_amp * (TAU * drift_freq * t).sin(),
            0.9 + 0.02 * (1.0 - (2.0 * phi).cos()) / 2.0,
            z0 + 0.15 * (TAU * drift_freq * 0.7 * t).sin(),
        ];
        (a, root)
    })
}

fn wave_program(rng: &mut ChaCha8Rng) -> Program {
    let freq = rng.gen_range(1.1..1.45);
    let amp = rng.gen_range(0.4..0.7);
    let phase0 = rng.gen_range(0.0..TAU);
    // Tempo wobble, as in the walk program.
    let wobble_amp = rng.gen_range(0.5..1.0);
    let wobble_freq = rng.gen_range(0.15..0.35);
    let wobble_phase = rng.gen_range(0.0..TAU);
    let x0 = rng.gen_range(-0.3..0.3);
    let z0 = rng.gen_range(-0.3..0.3);
    Box::new(move |t| {
        let mut a = [[0.0; 3]; 16];
        // Raise the right arm sideways and wave the forearm.
        a[13][2] = -2.3;
        let phi = TAU * freq * t + phase0 + wobble_amp * (TAU * wobble_freq * t + wobble_phase).sin();
        a[14][2] = 0.5 + amp * phi.sin();
        // Idle sway of the left arm and torso.
        a[10][0] = 0.1 * (TAU * 0.4 * t).sin();
        a[1][2] = 0.04 * (TAU * 0.3 * t).sin();
        (a, [x0, 0.9, z0])
    })
}

fn squat_program(rng: &mut ChaCha8Rng) -> Program {
    let freq = rng.gen_range(0.4..0.7);
    let amp = rng.gen_range(0.8..1.2);
    let x0 = rng.gen_range(-0.3..0.3);
    let z0 = rng.gen_range(-0.2..0.2);
    Box::new(move |t| {
        let theta = amp * (1.0 - (TAU * freq * t).cos()) / 2.0;
        let mut a = [[0.0; 3]; 16];
        // Hips flex the thighs forward, knees fold twice as far, the
        // spine leans to compensate, arms reach forward for balance.
        for (hip, knee) in [(4, 5), (7, 8)] {
            a[hip][0] = -theta;
            a[knee][0] = 2.0 * theta;
        }
        a[1][0] = 0.3 * theta;
        a[10][0] = -0.8 * theta;
        a[13][0] = -0.8 * theta;
        let drop = 0.9 * (1.0 - theta.cos());
        (a, [x0, 0.9 - drop, z0])
    })
}

fn static_program(rng: &mut ChaCha8Rng) -> Program {
    // A randomized stance held exactly: the noise is in the stance choice,
    // not across frames, so a zero-velocity predictor is perfect here.
    let mut a = [[0.0; 3]; 16];
    for v in a.iter_mut().flatten() {
        *v = rng.gen_range(-0.12..0.12);
    }
    a[0] = [0.0; 3];
    let root = [rng.gen_range(-0.3..0.3), 0.9, rng.gen_range(-0.2..0.2)];
    Box::new(move |_| (a, root))
}

fn kind_program(kind: MotionKind, rng: &mut ChaCha8Rng) -> Program {
    match kind {
        MotionKind::Walk => walk_program(rng),
        MotionKind::Wave => wave_program(rng),
        MotionKind::Squat => squat_program(rng),
        MotionKind::Static => static_program(rng),
        MotionKind::Mixed => unreachable!("mixed expands to segments"),
    }
}

fn fill_frames(
    traj: &mut Trajectory,
    skeleton: &Skeleton,
    rest: &[Vector3<f64>],
    program: &Program,
    frames: usize,
) {
    for i in 0..frames {
        let t = i as f64 / FRAME_RATE;
        let (angles, root) = program(t);
        let pose = pose_from_angles(skeleton, rest, &angles);
        let coords = forward_kinematics(skeleton, &pose).expect("bounded angles stay regular");
        let coord: Vec<[f64; 3]> = coords.joints().to_vec();
        let lie: Vec<[f64; 6]> = pose
            .to_flat()
            .chunks_exact(LIE_DIMS)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
            .collect();
        traj.frames.push(Frame {
            coord,
            lie: Some(lie),
            kp2d: None,
            root: Some(root),
        });
    }
}

/// Generates one trajectory of the given kind at 25 Hz. `mixed`
/// concatenates several segments of the other kinds. Deterministic in
/// `seed`.
pub fn synth_motion(kind: MotionKind, length: usize, seed: u64) -> Result<Trajectory, SynthError> {
    if length < MIN_FRAMES {
        return Err(SynthError::TooShort { got: length });
    }
    let skeleton = Skeleton::default_h36m16();
    let rest = rest_offsets(&skeleton);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory::new(kind.to_string(), FRAME_RATE);
    match kind {
        MotionKind::Mixed => {
            const MIN_SEGMENT: usize = 15;
            let max_segments = (length / MIN_SEGMENT).max(1);
            let segments = rng.gen_range(2..=4usize).min(max_segments);
            let mut remaining = length;
            for s in 0..segments {
                let left = segments - 1 - s;
                let frames = if left == 0 {
                    remaining
                } else {
                    let hi = remaining - left * MIN_SEGMENT;
                    rng.gen_range(MIN_SEGMENT..=hi.min(remaining / 2 + MIN_SEGMENT))
                };
                remaining -= frames;
                let pick = [
                    MotionKind::Walk,
                    MotionKind::Wave,
                    MotionKind::Squat,
                    MotionKind::Static,
                ][rng.gen_range(0..4)];
                let program = kind_program(pick, &mut rng);
                fill_frames(&mut traj, &skeleton, &rest, &program, frames);
            }
        }
        other => {
            let program = kind_program(other, &mut rng);
            fill_frames(&mut traj, &skeleton, &rest, &program, length);
        }
    }
    Ok(traj)
}

/// Fills `kp2d` on every frame: absolute joints projected through the
/// camera, Gaussian pixel noise (seeded), then normalization to [-1, 1].
pub fn project_2d(
    traj: &Trajectory,
    camera: &Camera,
    noise_px: f64,
    seed: u64,
) -> Result<Trajectory, SynthError> {
    camera.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if noise_px > 0.0 {
        Some(Normal::new(0.0, noise_px).expect("positive std dev"))
    } else {
        None
    };
    let mut out = traj.clone();
    for (i, frame) in out.frames.iter_mut().enumerate() {
        let root = frame.root.ok_or(SynthError::MissingRoot { frame: i })?;
        let mut kp = Vec::with_capacity(frame.coord.len());
        for p in &frame.coord {
            let world = [p[0] + root[0], p[1] + root[1], p[2] + root[2]];
            let mut pixel = camera.project_pixel(camera.world_to_camera(world))?;
            if let Some(n) = &noise {
                pixel[0] += n.sample(&mut rng);
                pixel[1] += n.sample(&mut rng);
            }
            kp.push(camera.normalize_pixel(pixel));
        }
        frame.kp2d = Some(kp);
    }
    Ok(out)
}

/// Generates `sequences` trajectories cycling through `kinds`, each with
/// its own derived seed.
pub fn synth_dataset(
    kinds: &[MotionKind],
    sequences: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, SynthError> {
    (0..sequences)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            synth_motion(kind, length, derive_seed(seed, i as u64))
        })
        .collect()
}

/// Splitmix64 of `(seed, index)`, decorrelating per-sequence streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{coord_to_lie, fk_flat, CoordPose};

    #[test]
    fn pinhole_oracle_round_numbers() {
        let camera = Camera::default();
        // Camera-frame point: offset 0.1 at unit depth.
        let pixel = camera.project_pixel([0.1, 0.0, 1.0]).unwrap();
        assert_eq!(pixel, [600.0, 500.0]);
        let norm = camera.normalize_pixel(pixel);
        assert_eq!(norm, [0.2, 0.0]);
    }

    #[test]
    fn optical_axis_projects_to_center() {
        let camera = Camera::default();
        // The world point on the optical axis maps to the principal point.
        let p = camera.project_normalized([0.0, 1.0, 0.0]).unwrap();
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn behind_camera_is_detected() {
        let camera = Camera::default();
        // Behind the camera plane (z_world beyond the camera at z=4).
        let err = camera.project_normalized([0.0, 1.0, 5.0]).unwrap_err();
        assert!(matches!(err, SynthError::BehindCamera { .. }), "got {err:?}");
        assert!(err.to_string().contains("BEHIND_CAMERA"));
    }

    #[test]
    fn projection_is_scale_consistent() {
        let traj = synth_motion(MotionKind::Walk, 40, 3).unwrap();
        let camera = Camera::default();
        let mut scaled_traj = traj.clone();
        for f in &mut scaled_traj.frames {
            for p in &mut f.coord {
                for v in p.iter_mut() {
                    *v *= 2.0;
                }
            }
            let r = f.root.as_mut().unwrap();
            for v in r.iter_mut() {
                *v *= 2.0;
            }
        }
        let mut scaled_cam = camera.clone();
        for v in scaled_cam.translation.iter_mut() {
            *v *= 2.0;
        }
        let a = project_2d(&traj, &camera, 0.0, 0).unwrap();
        let b = project_2d(&scaled_traj, &scaled_cam, 0.0, 0).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (pa, pb) in fa.kp2d.as_ref().unwrap().iter().zip(fb.kp2d.as_ref().unwrap()) {
                assert!((pa[0] - pb[0]).abs() < 1e-12 && (pa[1] - pb[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn walk_knees_are_anti_phase() {
        let traj = synth_motion(MotionKind::Walk, 120, 9).unwrap();
        let left: Vec<f64> = traj.frames.iter().map(|f| f.lie.as_ref().unwrap()[5][0]).collect();
        let right: Vec<f64> = traj.frames.iter().map(|f| f.lie.as_ref().unwrap()[8][0]).collect();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        assert!(var(&left) > 1e-3, "left knee barely moves");
        // A pi phase shift of A(1-cos)/2 makes the two series sum to the
        // constant A, so the sum's variance collapses.
        let sums: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
        assert!(var(&sums) < 1e-18, "knee series are not anti-phase: var {}", var(&sums));
    }

    #[test]
    fn bone_lengths_are_constant_across_frames() {
        let skeleton = Skeleton::default_h36m16();
        for kind in [MotionKind::Walk, MotionKind::Wave, MotionKind::Squat, MotionKind::Mixed] {
            let traj = synth_motion(kind, 60, 17).unwrap();
            for frame in &traj.frames {
                let lengths = skeleton.bone_lengths_from(&frame.coord).unwrap();
                for (j, (a, b)) in lengths.iter().zip(&skeleton.bone_lengths).enumerate() {
                    assert!((a - b).abs() < 1e-9, "{kind}: bone {j}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn frames_are_kinematically_exact() {
        let skeleton = Skeleton::default_h36m16();
        let traj = synth_motion(MotionKind::Mixed, 64, 21).unwrap();
        for frame in &traj.frames {
            // Stored lie reproduces stored coords through FK.
            let flat: Vec<f64> = frame.lie.as_ref().unwrap().iter().flatten().copied().collect();
            let fk = fk_flat(&skeleton, &flat);
            let coords: Vec<f64> = frame.coord.iter().flatten().copied().collect();
            for (a, b) in fk.iter().zip(&coords) {
                assert!((a - b).abs() < 1e-9);
            }
            // And the coords round trip through the analytic IK.
            let pose = CoordPose::from_flat(&coords, skeleton.root);
            let lie = coord_to_lie(&skeleton, &pose).unwrap();
            let back = fk_flat(&skeleton, &lie.to_flat());
            for (a, b) in back.iter().zip(&coords) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_motion(MotionKind::Squat, 50, 5).unwrap();
        let b = synth_motion(MotionKind::Squat, 50, 5).unwrap();
        assert_eq!(a, b);
        let c = synth_motion(MotionKind::Squat, 50, 6).unwrap();
        assert_ne!(a, c);

        let p = project_2d(&a, &Camera::default(), 3.0, 11).unwrap();
        let q = project_2d(&a, &Camera::default(), 3.0, 11).unwrap();
        assert_eq!(p, q);
        let r = project_2d(&a, &Camera::default(), 3.0, 12).unwrap();
        assert_ne!(p, r);
    }

    #[test]
    fn static_motion_holds_one_pose() {
        let traj = synth_motion(MotionKind::Static, 40, 13).unwrap();
        for frame in &traj.frames[1..] {
            assert_eq!(frame, &traj.frames[0], "static frames must be identical");
        }
    }

    #[test]
    fn too_short_requests_are_rejected() {
        let err = synth_motion(MotionKind::Walk, 29, 0).unwrap_err();
        assert!(matches!(err, SynthError::TooShort { got: 29 }));
        assert!(synth_motion(MotionKind::Walk, 30, 0).is_ok());
    }

    #[test]
    fn subjects_stay_inside_the_image() {
        let camera = Camera::default();
        for kind in MotionKind::ALL {
            for seed in 0..4 {
                let traj = synth_motion(kind, 200, 100 + seed).unwrap();
                let projected = project_2d(&traj, &camera, DEFAULT_NOISE_PX, seed).unwrap();
                for frame in &projected.frames {
                    for p in frame.kp2d.as_ref().unwrap() {
                        assert!(
                            p[0].abs() < 1.2 && p[1].abs() < 1.2,
                            "{kind}/{seed}: keypoint {p:?} leaves the normalized frame"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn camera_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        let camera = Camera::default();
        write_camera(&camera, &path).unwrap();
        let back = read_camera(&path).unwrap();
        assert_eq!(back, camera);

        let mut bad = camera;
        bad.focal = [0.0, 1000.0];
        write_camera(&bad, &path).unwrap();
        let err = read_camera(&path).unwrap_err();
        assert!(matches!(err, SynthError::BadCamera(_)), "got {err:?}");
    }

    #[test]
    fn dataset_cycles_kinds_with_derived_seeds() {
        let kinds = [MotionKind::Walk, MotionKind::Wave];
        let trajs = synth_dataset(&kinds, 5, 40, 42).unwrap();
        assert_eq!(trajs.len(), 5);
        let labels: Vec<_> = trajs.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, ["walk", "wave", "walk", "wave", "walk"]);
        assert_ne!(trajs[0], trajs[2], "derived seeds must differ");
        assert_ne!(trajs[0], trajs[4]);
    }
}
