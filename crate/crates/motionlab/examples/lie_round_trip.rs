//! Round trips between se(3) twists and SE(3) rigid transforms.
//!
//! Samples random twists, pushes them through the exponential map and
//! back through the logarithm, and reports the worst element-wise error,
//! including near the small-angle and pi-rotation branches.

use motionlab::lie::{canonicalize, exp_map, log_map, LieError, Twist};
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_twist(rng: &mut StdRng, max_angle: f64) -> Twist {
    let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        .normalize();
    let angle = rng.gen::<f64>() * max_angle;
    Twist {
        omega: axis * angle,
        nu: Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
    }
}

fn main() -> Result<(), LieError> {
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        // Cover the generic branch, the Taylor branch, and angles near pi.
        let max_angle = match i % 3 {
            0 => std::f64::consts::PI - 0.01,
            1 => 1e-4,
            _ => 0.5,
        };
        let twist = random_twist(&mut rng, max_angle);
        let transform = exp_map(&twist)?;
        let back = log_map(&transform)?;
        for k in 0..3 {
            worst = worst.max((twist.omega[k] - back.omega[k]).abs());
            worst = worst.max((twist.nu[k] - back.nu[k]).abs());
        }
    }
    println!("exp/log round trip over 10,000 twists: max error {worst:.3e}");

    // Rotations by more than pi wrap around to the equivalent short way.
    let long_way = Twist { omega: Vector3::new(0.0, 0.0, 4.0), nu: Vector3::zeros() };
    let wrapped = canonicalize(&long_way)?;
    println!(
        "canonicalize |omega|=4.00 -> |omega|={:.5} (2*pi - 4 = {:.5})",
        wrapped.omega.norm(),
        2.0 * std::f64::consts::PI - 4.0
    );

    let recovered = log_map(&exp_map(&long_way)?)?;
    println!("log(exp(long way)) gives the same rotation: |omega|={:.5}", recovered.omega.norm());
    Ok(())
}
