//! Differentiable forward kinematics on the 16-joint skeleton.
//!
//! Builds an articulated pose from per-joint rotations, runs it through
//! the product-of-exponentials chain, and checks that bone lengths stay
//! constant and that the coordinate -> twist inverse recovers the pose.

use motionlab::pose::{coord_to_lie, forward_kinematics};
use motionlab::skeleton::Skeleton;
use motionlab::synth::{pose_from_angles, rest_offsets};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let skeleton = Skeleton::default_h36m16();
    println!("skeleton: {} joints, {} chains", skeleton.joint_count(), skeleton.chains.len());

    // A mild crouch: flex both knees backward and rock the hips forward.
    let mut angles = [[0.0f64; 3]; 16];
    angles[5] = [0.6, 0.0, 0.0]; // left knee
    angles[8] = [0.6, 0.0, 0.0]; // right knee
    angles[4] = [-0.3, 0.0, 0.0]; // left hip
    angles[7] = [-0.3, 0.0, 0.0]; // right hip
    let rest = rest_offsets(&skeleton);
    let pose = pose_from_angles(&skeleton, &rest, &angles);

    let coords = forward_kinematics(&skeleton, &pose)?;
    let lengths = skeleton.bone_lengths_from(coords.joints())?;
    let worst_stretch = lengths
        .iter()
        .zip(&skeleton.bone_lengths)
        .skip(1)
        .map(|(got, want)| (got - want).abs())
        .fold(0.0f64, f64::max);
    println!("bone length drift after articulation: {worst_stretch:.3e}");

    for (name, j) in [("head", 3), ("left_ankle", 6), ("right_wrist", 15)] {
        let p = coords.position(j);
        println!("  {name:>11}: ({:+.3}, {:+.3}, {:+.3})", p.x, p.y, p.z);
    }

    // Invert: coordinates back to twists, then forward again.
    let recovered = coord_to_lie(&skeleton, &coords)?;
    let again = forward_kinematics(&skeleton, &recovered)?;
    let worst = coords
        .joints()
        .iter()
        .zip(again.joints())
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
        .fold(0.0f64, f64::max);
    println!("FK(coord_to_lie(FK(pose))) round trip error: {worst:.3e}");
    Ok(())
}
