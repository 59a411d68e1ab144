use diffplan::chain::{ChainSpec, JointState};
use diffplan::diffusion::*;
use diffplan::eval::roughness;
use diffplan::worldgen::gen_dataset;
use diffplan::rng::stream;
use rand::Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let widths: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let chain = ChainSpec::default_arm();
    let data = gen_dataset(&chain, 50, 10_000, 42).unwrap();
    let data_ar = roughness(&data).ar;
    eprintln!("dataset AR = {data_ar:.4}");
    let w = if widths == 0 { [32, 64, 128] } else { [widths, widths * 2, widths * 4] };
    let cfg = TrainConfig { steps, batch, learning_rate: lr, seed: 7, widths: w, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&data, &cfg).unwrap();
    eprintln!("train {:?} loss {:.4} -> tail {:.4}", t0.elapsed(),
        out.loss_history[0],
        out.loss_history[steps-20..].iter().sum::<f64>() / 20.0);
    let sched = DiffusionSchedule::new(cfg.timesteps, cfg.beta_max).unwrap();
    let t0 = Instant::now();
    let mut rng = stream(99, "qs", 0, 0);
    let mut ars = Vec::new();
    let mut max_ar: f64 = 0.0;
    for i in 0..64u64 {
        let s0 = JointState::from_vec((0..3).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let sg = JointState::from_vec((0..3).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let samples = sample_prior(&out.params, &sched, &chain, &s0, &sg, 1, 1000 + i).unwrap();
        let r = roughness(&samples);
        ars.push(r.ar);
        max_ar = max_ar.max(r.ar);
        assert_eq!(samples[0].waypoint(0).0, s0.0);
        assert_eq!(samples[0].waypoint(49).0, sg.0);
    }
    let mean_ar = ars.iter().sum::<f64>() / ars.len() as f64;
    eprintln!("sampling {:?}; sample AR mean {:.4} max {:.4}, dataset AR {:.4}, ratio mean {:.2} max {:.2}",
        t0.elapsed(), mean_ar, max_ar, data_ar, mean_ar / data_ar, max_ar / data_ar);
}
