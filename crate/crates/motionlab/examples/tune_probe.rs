//! Scratch probe for schedule tuning.
use motionlab::ablate::train_and_eval;
use motionlab::config::Config;
use motionlab::metrics::HORIZONS_MS;
use motionlab::synth::{project_2d, synth_dataset, Camera, MotionKind};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = Camera::default();
    let n: usize = std::env::var("N").map(|v| v.parse().unwrap()).unwrap_or(40);
    let trajs: Vec<_> = synth_dataset(&[MotionKind::Walk, MotionKind::Wave], n, 60, 1234)?
        .iter().enumerate()
        .map(|(i, t)| project_2d(t, &camera, 3.0, 9000 + i as u64))
        .collect::<Result<_, _>>()?;

    let mut config = Config::default();
    config.past_frames = 9;
    config.future_frames = 20;
    config.hidden = std::env::var("H").map(|v| v.parse().unwrap()).unwrap_or(64);
    config.layers = 2;
    config.dropout = 0.1;
    config.batch = 32;
    config.batches_per_epoch = std::env::var("BPE").map(|v| v.parse().unwrap()).unwrap_or(4);
    config.epochs = std::env::var("E").map(|v| v.parse().unwrap()).unwrap_or(100);
    config.lr = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(0.02);
    config.momentum = std::env::var("MOM").map(|v| v.parse().unwrap()).unwrap_or(0.9);
    config.decay_every = std::env::var("DE").map(|v| v.parse().unwrap()).unwrap_or(150);
    config.decay_factor = 0.6;
    config.stride = 10;
    config.train_ratio = 0.8;
    config.seed = 1234;

    let start = Instant::now();
    let (result, reports) = train_and_eval(&config, &trajs, "probe")?;
    let train_secs = start.elapsed().as_secs_f64();
    let all = reports.last().unwrap();
    println!("steps={} final={:.4} best={:.4} time={:.0}s mpjpe={:.1}mm p={:.1}mm",
        result.steps, result.final_total(), result.best_total, train_secs, all.mpjpe_mm, all.p_mpjpe_mm);
    for (i, &ms) in HORIZONS_MS.iter().enumerate() {
        println!("  {ms:>4}ms: model {:.3} vs zv {:.3}  {}", all.mae_per_horizon[i], all.zv_mae_per_horizon[i],
            if all.mae_per_horizon[i] < all.zv_mae_per_horizon[i] {"WIN"} else {"lose"});
    }
    Ok(())
}
