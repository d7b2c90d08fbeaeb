//! Overfits a tiny model on a single synthetic sequence.
//!
//! Demonstrates the full training loop: windowing, batching, the
//! multi-task loss, SGD with decay, and the per-epoch statistics that
//! `motionlab train` writes to its CSV log.

use motionlab::config::Config;
use motionlab::data::make_windows;
use motionlab::skeleton::Skeleton;
use motionlab::synth::{project_2d, synth_motion, Camera};
use motionlab::train::{train, TrainOptions};
use std::sync::Arc;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = Camera::default();
    let traj = synth_motion(motionlab::synth::MotionKind::Wave, 40, 21)?;
    let traj = project_2d(&traj, &camera, 0.0, 0)?;

    let mut config = Config::default();
    config.past_frames = 9;
    config.future_frames = 5;
    config.hidden = 32;
    config.layers = 1;
    config.dropout = 0.0;
    config.batch = 4;
    config.batches_per_epoch = 10;
    config.epochs = 30;
    config.lr = 0.02;
    config.decay_every = 60;
    config.decay_factor = 0.7;
    config.stride = 3;
    config.train_ratio = 1.0;
    config.seed = 21;

    let trajs = vec![traj];
    let windows = make_windows(&trajs, config.past_frames, config.future_frames, config.stride, 1.0, 21);
    println!("{} windows from one 40-frame sequence", windows.train.len());

    let start = Instant::now();
    let result = train(
        &config,
        Arc::new(Skeleton::default_h36m16()),
        &trajs,
        &windows.train,
        &TrainOptions::default(),
    )?;
    let secs = start.elapsed().as_secs_f64();

    println!("epoch    total      l_pln      l_mgn      l_gr       omega_sp   lr");
    for stats in result.history.iter().step_by(5).chain(result.history.last()) {
        println!(
            "{:>5}  {:.6}  {:.6}  {:.6}  {:.6}  {:.6}  {:.5}",
            stats.epoch, stats.total, stats.pln, stats.mgn, stats.gr, stats.omega, stats.lr
        );
    }
    println!(
        "{} steps in {secs:.1} s; loss {:.4} -> {:.4} (best {:.4} at epoch {})",
        result.steps,
        result.history.first().map(|e| e.total).unwrap_or(f64::NAN),
        result.final_total(),
        result.best_total,
        result.best_epoch
    );
    Ok(())
}
