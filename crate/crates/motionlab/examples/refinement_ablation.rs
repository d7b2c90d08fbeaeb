//! Scores each global-refinement variant against an unrefined baseline.
//!
//! Runs the same study as `motionlab ablate --preset refinement`, but
//! with a deliberately tiny schedule so it finishes quickly; expect the
//! differences to be noisier than a full run.

use motionlab::ablate::{refinement_csv, refinement_study};
use motionlab::config::Config;
use motionlab::synth::{project_2d, synth_dataset, Camera, MotionKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = Camera::default();
    let trajs: Vec<_> = synth_dataset(&[MotionKind::Walk, MotionKind::Squat], 12, 60, 77)?
        .iter()
        .map(|t| project_2d(t, &camera, 3.0, 77))
        .collect::<Result<_, _>>()?;

    let mut config = Config::default();
    config.past_frames = 9;
    config.future_frames = 10;
    config.hidden = 24;
    config.layers = 1;
    config.batch = 8;
    config.batches_per_epoch = 6;
    config.epochs = 4;
    config.stride = 10;
    config.train_ratio = 0.75;
    config.seed = 77;

    println!("training baseline + 4 refinement variants (5 runs)...");
    let rows = refinement_study(&config, &trajs)?;
    print!("{}", refinement_csv(&rows));

    let best = rows
        .iter()
        .max_by(|a, b| a.improvement_mm.total_cmp(&b.improvement_mm))
        .expect("four variants");
    println!(
        "\nbest variant on this run: {} ({:+.2} mm vs no refinement)",
        best.variant, best.improvement_mm
    );
    Ok(())
}
