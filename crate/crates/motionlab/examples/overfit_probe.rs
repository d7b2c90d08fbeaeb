//! Scratch probe: single-sequence overfit schedule search (two-phase).
use motionlab::config::Config;
use motionlab::data::make_windows;
use motionlab::skeleton::Skeleton;
use motionlab::synth::{project_2d, synth_motion, Camera, MotionKind};
use motionlab::train::{train, TrainOptions};
use std::sync::Arc;
use std::time::Instant;

fn env<T: std::str::FromStr>(k: &str, d: T) -> T where T::Err: std::fmt::Debug {
    std::env::var(k).map(|v| v.parse().unwrap()).unwrap_or(d)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = Camera::default();
    let traj = synth_motion(MotionKind::Wave, 30, 33)?;
    let traj = project_2d(&traj, &camera, 0.0, 0)?;

    let mut config = Config::default();
    config.past_frames = env("T", 4);
    config.future_frames = env("K", 2);
    config.hidden = env("H", 48);
    config.layers = env("L", 2);
    config.dropout = 0.0;
    config.batch = env("B", 1);
    config.batches_per_epoch = 1;
    config.epochs = env("E", 1200);
    config.lr = env("LR", 0.1);
    config.momentum = env("MOM", 0.95);
    config.decay_every = env("DE", 220);
    config.decay_factor = env("DF", 0.5);
    config.stride = env("S", 50);
    config.train_ratio = 1.0;
    config.clip_norm = env("CN", 5.0);
    config.seed = env("SEED", 33);
    if let Ok(m) = std::env::var("G") { config.gr_mode = match m.as_str() { "gru" => motionlab::config::GrMode::Gru, "conved" => motionlab::config::GrMode::Conved, "fixed" => motionlab::config::GrMode::BlendFixed, _ => motionlab::config::GrMode::BlendAdaptive }; }

    let trajs = vec![traj];
    let w = make_windows(&trajs, config.past_frames, config.future_frames, config.stride, 1.0, 33);
    println!("{} windows", w.train.len());
    let skeleton = Arc::new(Skeleton::default_h36m16());
    let start = Instant::now();
    let result = train(&config, skeleton.clone(), &trajs, &w.train, &TrainOptions::default())?;
    let secs = start.elapsed().as_secs_f64();
    let last = result.history.last().unwrap();
    println!("phase A: steps={} final={:.3e} best={:.3e} time={:.1}s", result.steps, result.final_total(), result.best_total, secs);
    println!("  components: pln {:.2e} mgn {:.2e} gr {:.2e} omega {:.2e}", last.pln, last.mgn, last.gr, last.omega);

    // Phase B: warm start from phase A params with a fresh, lower schedule.
    let e2: usize = env("E2", 800);
    if e2 > 0 {
        let mut config_b = config.clone();
        config_b.epochs = e2;
        config_b.lr = env("LR2", 1.5e-3);
        config_b.decay_every = env("DE2", 80);
        config_b.decay_factor = env("DF2", 0.45);
        config_b.momentum = env("MOM2", 0.95);
        let warm = if std::env::var("FROM").as_deref() == Ok("best") { result.best_params.clone() } else { result.final_params.clone() };
        let opts = TrainOptions { init_params: Some(warm), ..Default::default() };
        let start_b = Instant::now();
        let result_b = train(&config_b, skeleton, &trajs, &w.train, &opts)?;
        let secs_b = start_b.elapsed().as_secs_f64();
        let last_b = result_b.history.last().unwrap();
        println!("phase B: steps={} final={:.3e} best={:.3e} time={:.1}s", result_b.steps, result_b.final_total(), result_b.best_total, secs_b);
        println!("  components: pln {:.2e} mgn {:.2e} gr {:.2e} omega {:.2e}", last_b.pln, last_b.mgn, last_b.gr, last_b.omega);
        println!("combined: steps={} best={:.3e} time={:.1}s", result.steps + result_b.steps, result_b.best_total.min(result.best_total), secs + secs_b);
    }
    Ok(())
}
