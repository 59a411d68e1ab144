use diffplan::chain::ChainSpec;
use diffplan::diffusion::{train, TrainConfig};
use diffplan::worldgen::gen_dataset;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(256);
    let chain = ChainSpec::default_arm();
    let t0 = Instant::now();
    let data = gen_dataset(&chain, 50, 2000, 1).unwrap();
    eprintln!("dataset 2k: {:.2?}", t0.elapsed());
    let cfg = TrainConfig { steps, batch, seed: 1, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&data, &cfg).unwrap();
    let dt = t0.elapsed();
    eprintln!(
        "{} steps batch {}: {:.2?} total, {:.0} ms/step, loss {:.4} -> {:.4}, params {}",
        steps, batch, dt, dt.as_millis() as f64 / steps as f64,
        out.loss_history[0], out.loss_history.last().unwrap(), out.params.param_count()
    );
}
