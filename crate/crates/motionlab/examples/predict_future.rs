//! Trains a small model and compares its future-motion predictions
//! against the zero-velocity baseline on held-out sequences.
//!
//! This is the core claim of the pipeline: the motion decoder should
//! beat simply holding the last observed pose, increasingly so at
//! longer horizons.

use motionlab::ablate::train_and_eval;
use motionlab::config::Config;
use motionlab::metrics::HORIZONS_MS;
use motionlab::synth::{project_2d, synth_dataset, Camera, MotionKind};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = Camera::default();
    let trajs: Vec<_> = synth_dataset(&[MotionKind::Walk, MotionKind::Wave], 24, 60, 404)?
        .iter()
        .map(|t| project_2d(t, &camera, 3.0, 404))
        .collect::<Result<_, _>>()?;

    let mut config = Config::default();
    config.past_frames = 9;
    config.future_frames = 20;
    config.hidden = 48;
    config.layers = 1;
    config.dropout = 0.1;
    config.batch = 16;
    config.batches_per_epoch = 12;
    config.epochs = 10;
    config.lr = 0.01;
    config.stride = 8;
    config.train_ratio = 0.75;
    config.seed = 404;

    println!("training on {} sequences...", trajs.len());
    let start = Instant::now();
    let (result, reports) = train_and_eval(&config, &trajs, "predict-example")?;
    println!("trained to total loss {:.4} in {:.0} s\n", result.final_total(), start.elapsed().as_secs_f64());

    println!("held-out metrics per action:");
    for report in &reports {
        println!(
            "  {:>5}: {} windows, MPJPE {:.1} mm, P-MPJPE {:.1} mm",
            report.label, report.windows, report.mpjpe_mm, report.p_mpjpe_mm
        );
    }
    let all = reports.last().expect("aggregate row");
    println!("\nangular MAE by horizon (model vs zero-velocity):");
    for (i, &ms) in HORIZONS_MS.iter().enumerate() {
        let model = all.mae_per_horizon[i];
        let zv = all.zv_mae_per_horizon[i];
        let marker = if model < zv { "model wins" } else { "baseline wins" };
        println!("  {ms:>4} ms: {model:.3} vs {zv:.3}  ({marker})");
    }
    Ok(())
}
