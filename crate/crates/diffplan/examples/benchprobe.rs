use diffplan::chain::ChainSpec;
use diffplan::diffusion::*;
use diffplan::eval::{bench, BenchConfig};
use diffplan::guidance::GuideConfig;
use diffplan::worldgen::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let w0: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let scenes_per_kind: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let chain = ChainSpec::default_arm();
    let data = gen_dataset(&chain, 50, 10_000, 42).unwrap();
    let cfg = TrainConfig {
        steps, batch: 128, learning_rate: 1.5e-3, seed: 7,
        widths: [w0, w0*2, w0*4], ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = train(&data, &cfg).unwrap();
    eprintln!("train small: {:.1?}, loss tail {:.4}", t0.elapsed(),
        out.loss_history[steps-20..].iter().sum::<f64>() / 20.0);
    let sched = DiffusionSchedule::new(cfg.timesteps, cfg.beta_max).unwrap();

    let params = WorldgenParams::default();
    let mut scenes = Vec::new();
    for kind in SceneKind::ALL {
        let mut n = 0;
        let mut s = 0u64;
        while n < scenes_per_kind && s < 200 {
            if let Ok(scene) = gen_scene(kind, &chain, &params, diffplan::rng::derive_seed(1, "probe", kind.to_string().len() as u64 * 1000 + s)) {
                scenes.push((scene, kind));
                n += 1;
            }
            s += 1;
        }
    }
    eprintln!("{} scenes", scenes.len());
    let guides = GuideConfig::default_ensemble();
    let t0 = Instant::now();
    let report = bench(&out.params, &sched, &chain, &scenes, &guides,
        &BenchConfig { seed: 5, batch: 120, sweep_guides: true, ..BenchConfig::default() }).unwrap();
    let a = &report.aggregates;
    eprintln!("bench {:.1?} ({:.1?}/scene)", t0.elapsed(), t0.elapsed() / scenes.len() as u32);
    eprintln!("success selected {:.3} any {:.3}", a.success_selected_rate, a.success_any_rate);
    eprintln!("acsm ensemble {:.3} single-mean {:.3}", a.mean_acsm, a.mean_single_guide_acsm);
    eprintln!("guide selected rates {:?}", a.guide_selected_rate.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    eprintln!("guide contributions  {:?}", a.guide_contribution.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    if let Some(sweep) = &report.sweep_guides {
        eprintln!("sweep {:?}", sweep);
    }
    let per_kind: Vec<String> = SceneKind::ALL.iter().map(|k| {
        let recs: Vec<_> = report.records.iter().filter(|r| r.kind == *k).collect();
        format!("{}: {}/{}", k, recs.iter().filter(|r| r.success_selected).count(), recs.len())
    }).collect();
    eprintln!("per kind: {per_kind:?}");
}
