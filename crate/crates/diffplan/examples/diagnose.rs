use diffplan::chain::*;
use diffplan::diffusion::*;
use diffplan::eval::*;
use diffplan::geom::{extents, overlap_volume, vertices, ExpansionPolicy};
use diffplan::guidance::*;
use diffplan::worldgen::*;
use std::time::Instant;

fn main() {
    let chain = ChainSpec::default_arm();
    let data = gen_dataset(&chain, 50, 10_000, 42).unwrap();
    let cfg = TrainConfig {
        steps: 400, batch: 128, learning_rate: 1.5e-3, seed: 7,
        widths: [8, 16, 32], ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let sched = DiffusionSchedule::new(cfg.timesteps, cfg.beta_max).unwrap();
    let wp = WorldgenParams::default();
    let guides = GuideConfig::default_ensemble();

    for seed_idx in 0..5u64 {
        let scene = match gen_scene(SceneKind::Tabletop, &chain, &wp, diffplan::rng::derive_seed(1, "probe", 8000 + seed_idx)) {
            Ok(s) => s, Err(_) => continue,
        };
        let t0 = Instant::now();
        let result = plan(&out.params, &sched, &scene, &chain, &guides,
            &PlanConfig { batch: 120, seed: 5, ..PlanConfig::default() }).unwrap();
        let mut self_fail = 0; let mut obst_fail = 0; let mut interp_only = 0; let mut free = 0;
        let mut zero_cost = 0; let mut zero_cost_free = 0;
        for (i, rec) in result.per_trajectory.iter().enumerate() {
            let tau = &result.batch[i];
            if rec.swept_cost == 0.0 { zero_cost += 1; if rec.collision_free { zero_cost_free += 1; } }
            if rec.collision_free { free += 1; continue; }
            // decompose: check waypoints only, no interpolation
            let mut wp_self = false; let mut wp_obst = false;
            for k in 0..tau.horizon() {
                let q = tau.waypoint(k);
                if self_collision(&chain, &q) { wp_self = true; }
                let bodies: Vec<_> = fk(&chain, &q).iter().map(|c| extents(&vertices(c))).collect();
                if scene.obstacles.iter().any(|o| { let oe = extents(&vertices(o)); bodies.iter().any(|b| overlap_volume(b, &oe) > 0.0) }) { wp_obst = true; }
            }
            if wp_self { self_fail += 1; } else if wp_obst { obst_fail += 1; } else { interp_only += 1; }
        }
        let sel = &result.per_trajectory[result.selected_index];
        println!("scene {}: free {free}/120 zero-cost {zero_cost} (free {zero_cost_free}), fails: self {self_fail} obst {obst_fail} interp {interp_only}; selected idx {} cost {:.2e} free={} ; {:.1?}",
            scene.name, result.selected_index, sel.swept_cost, sel.collision_free, t0.elapsed());
        // distance start to goal
        println!("  |goal-start| = {:.2}", (scene.goal.0.clone() - scene.start.0.clone()).norm());
    }
}
