//! Evaluation metrics: MPJPE, Procrustes-aligned MPJPE, angular MAE, and
//! the zero-velocity baseline.
//!
//! Perturbs ground-truth poses in controlled ways and shows how each
//! metric responds, including P-MPJPE's invariance to similarity
//! transforms.

use motionlab::metrics::{mae, mpjpe, p_mpjpe, zero_velocity, MaeMode, HORIZONS_MS};
use motionlab::pose::{CoordPose, LiePose};
use motionlab::skeleton::Skeleton;
use motionlab::synth::{synth_motion, MotionKind};
use nalgebra::{Rotation3, Vector3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let skeleton = Skeleton::default_h36m16();
    let traj = synth_motion(MotionKind::Walk, 75, 5)?;
    let gt = CoordPose::from_joints(traj.frames[0].coord.clone(), skeleton.root);

    // Move every non-root joint by exactly 5 mm. Poses are root-relative,
    // so the root never contributes; 15 of 16 joints at 5 mm reads as
    // 15/16 * 5 = 4.688 mm.
    let shifted: Vec<[f64; 3]> = gt
        .joints()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == skeleton.root { *p } else { [p[0] + sign * 0.005, p[1], p[2]] }
        })
        .collect();
    let shifted = CoordPose::from_joints(shifted, skeleton.root);
    println!("5 mm on non-root joints:  MPJPE = {:.3} mm", mpjpe(&shifted, &gt)?);

    // A rotated and scaled copy is geometrically identical after
    // Procrustes alignment, so P-MPJPE vanishes while MPJPE does not.
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.4);
    let similar: Vec<[f64; 3]> = gt
        .joints()
        .iter()
        .map(|j| {
            let p = rot * Vector3::new(j[0], j[1], j[2]) * 1.1;
            [p.x, p.y, p.z]
        })
        .collect();
    let similar = CoordPose::from_joints(similar, skeleton.root);
    println!(
        "rotated+scaled copy:      MPJPE = {:.3} mm, P-MPJPE = {:.3e} mm",
        mpjpe(&similar, &gt)?,
        p_mpjpe(&similar, &gt)?
    );

    // Zero-velocity holds the last observed pose; on a walk its MAE grows
    // with the horizon, which is the baseline learned models must beat.
    let frames = &traj.frames;
    let t0 = 40;
    let seed = lie_at(frames, t0, skeleton.root);
    let held = zero_velocity(&seed, 25);
    println!("zero-velocity MAE on a walk, by horizon:");
    for (i, &ms) in HORIZONS_MS.iter().enumerate() {
        let h = (ms as f64 / 1000.0 * traj.frame_rate).round() as usize;
        let gt_pose = lie_at(frames, t0 + h, skeleton.root);
        let err = mae(&held[h - 1], &gt_pose, skeleton.root, MaeMode::Omega)?;
        print!("  {ms:>4} ms: {err:.3}");
        if i % 4 == 3 {
            println!();
        }
    }
    println!("(the dip near 1000 ms is the gait cycle wrapping back to the held pose)");
    Ok(())
}

fn lie_at(frames: &[motionlab::data::Frame], t: usize, root: usize) -> LiePose {
    let flat: Vec<f64> = frames[t].lie.as_ref().unwrap().iter().flatten().copied().collect();
    LiePose::from_flat(&flat, root)
}
