//! Ground-truth collision oracle, trajectory metrics and the benchmark
//! harness.
//!
//! The oracle is stricter than the guidance costs: it linearly interpolates
//! between adjacent waypoints and requires zero overlap (no clearance, no
//! expansion) against every obstacle plus self-collision freedom at every
//! interpolated configuration, so it catches tunneling the per-waypoint
//! cost misses.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::chain::{fk, self_collision, ChainSpec, JointState, Trajectory};
use crate::diffusion::{DenoiserParams, DiffusionSchedule};
use crate::geom::{extents, overlap_volume, vertices};
use crate::guidance::{plan, GuideConfig, PlanConfig, PlanResult, Scene};
use crate::rng::{derive_seed, hash_label};
use crate::worldgen::SceneKind;
use crate::Result;

/// True when a single configuration is free of obstacle overlap (zero
/// clearance) and self-collision.
pub fn state_collision_free(q: &JointState, scene: &Scene, chain: &ChainSpec) -> bool {
    if self_collision(chain, q) {
        return false;
    }
    let bodies: Vec<_> = fk(chain, q).iter().map(|c| extents(&vertices(c))).collect();
    let obstacles: Vec<_> = scene.obstacles.iter().map(|o| extents(&vertices(o))).collect();
    bodies
        .iter()
        .all(|b| obstacles.iter().all(|o| overlap_volume(b, o) == 0.0))
}

/// Interpolate every adjacent waypoint pair into `substeps` configurations
/// and require every one of them (and the final goal state) to be
/// collision-free.
pub fn oracle_collision_free(
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    substeps: usize,
) -> bool {
    assert!(substeps >= 1, "oracle needs at least one substep");
    let h = tau.horizon();
    for k in 0..h - 1 {
        let a = tau.waypoint(k);
        let b = tau.waypoint(k + 1);
        for s in 0..substeps {
            let u = s as f64 / substeps as f64;
            let q = JointState(&a.0 * (1.0 - u) + &b.0 * u);
            if !state_collision_free(&q, scene, chain) {
                return false;
            }
        }
    }
    state_collision_free(&tau.waypoint(h - 1), scene, chain)
}

/// The four roughness statistics of a batch (means over trajectories):
/// average adjacent-step norm, max step excluding the first and last pair,
/// and the first/last step norms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Roughness {
    pub ar: f64,
    pub mresg: f64,
    pub rf2w: f64,
    pub rl2w: f64,
}

fn step_norms(tau: &Trajectory) -> Vec<f64> {
    (0..tau.horizon() - 1)
        .map(|k| (tau.waypoint(k + 1).0 - tau.waypoint(k).0).norm())
        .collect()
}

fn trajectory_roughness(tau: &Trajectory) -> Roughness {
    let steps = step_norms(tau);
    let n = steps.len();
    let ar = steps.iter().sum::<f64>() / n as f64;
    // Interior pairs only: drop the first and the last adjacent pair.
    let mresg = if n > 2 {
        steps[1..n - 1].iter().fold(0.0f64, |a, &b| a.max(b))
    } else {
        0.0
    };
    Roughness { ar, mresg, rf2w: steps[0], rl2w: steps[n - 1] }
}

pub fn roughness(batch: &[Trajectory]) -> Roughness {
    assert!(!batch.is_empty());
    let mut total = Roughness::default();
    for tau in batch {
        let r = trajectory_roughness(tau);
        total.ar += r.ar;
        total.mresg += r.mresg;
        total.rf2w += r.rf2w;
        total.rl2w += r.rl2w;
    }
    let n = batch.len() as f64;
    Roughness { ar: total.ar / n, mresg: total.mresg / n, rf2w: total.rf2w / n, rl2w: total.rl2w / n }
}

/// Mean cosine similarity over all unordered distinct pairs of flattened
/// trajectories; zero-norm trajectories contribute similarity 0.
pub fn acsm(batch: &[Trajectory]) -> f64 {
    assert!(batch.len() >= 2, "acsm needs at least two trajectories");
    let norms: Vec<f64> = batch.iter().map(|t| t.states().norm()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            pairs += 1;
            if norms[i] > 0.0 && norms[j] > 0.0 {
                total += batch[i].states().dot(batch[j].states()) / (norms[i] * norms[j]);
            }
        }
    }
    total / pairs as f64
}

/// Total joint-space path length, the sum of adjacent-step norms.
pub fn path_length(tau: &Trajectory) -> f64 {
    step_norms(tau).iter().sum()
}

// ---------------------------------------------------------------------------
// Benchmark harness.

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seed: u64,
    pub batch: usize,
    pub substeps: usize,
    /// Emit the guide-count prefix sweep (derived from per-guide flags).
    pub sweep_guides: bool,
    /// Record real wall-clock times in the report files. Off by default so
    /// reports are byte-identical across reruns.
    pub wall_clock: bool,
    pub multimodality: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            batch: 120,
            substeps: 8,
            sweep_guides: false,
            wall_clock: false,
            multimodality: None,
        }
    }
}

/// Per-guide outcomes within one scene, derived from that guide's
/// sub-batch of the ensemble run.
#[derive(Debug, Clone)]
pub struct GuideSceneStats {
    /// The sub-batch holds at least one collision-free trajectory.
    pub any_free: bool,
    /// The minimum-swept-cost trajectory of the sub-batch is collision-free.
    pub selected_free: bool,
    /// ACSM of the sub-batch (`None` when it holds fewer than two).
    pub acsm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub name: String,
    pub kind: SceneKind,
    pub success_selected: bool,
    pub success_any: bool,
    /// Bit `g` set when guide `g`'s sub-batch contains a collision-free
    /// trajectory.
    pub guide_flags: u64,
    pub path_length: f64,
    pub wall_ms: f64,
    pub acsm: f64,
    pub roughness: Roughness,
    pub per_guide: Vec<GuideSceneStats>,
    /// Set when planning failed outright for this scene.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchAggregates {
    pub scenes: usize,
    pub success_selected_rate: f64,
    pub success_any_rate: f64,
    pub mean_acsm: f64,
    /// Mean over guides of the per-sub-batch ACSM (averaged over scenes).
    pub mean_single_guide_acsm: f64,
    pub mean_path_length: f64,
    pub roughness: Roughness,
    /// Fraction of scenes where guide `g`'s sub-batch held a collision-free
    /// trajectory.
    pub guide_contribution: Vec<f64>,
    /// Fraction of scenes where guide `g`'s own minimum-cost pick was
    /// collision-free.
    pub guide_selected_rate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub records: Vec<SceneRecord>,
    pub aggregates: BenchAggregates,
    /// `(guide_count, success_any_rate)` pairs for prefix unions.
    pub sweep_guides: Option<Vec<(usize, f64)>>,
    pub wall_clock: bool,
}

fn scene_stats(result: &PlanResult, guides: usize) -> (u64, Vec<GuideSceneStats>) {
    let mut flags = 0u64;
    let mut per_guide = Vec::with_capacity(guides);
    for g in 0..guides {
        let members: Vec<usize> = result
            .per_trajectory
            .iter()
            .enumerate()
            .filter(|(_, r)| r.guide == g)
            .map(|(i, _)| i)
            .collect();
        let any_free = members.iter().any(|&i| result.per_trajectory[i].collision_free);
        if any_free && g < 64 {
            flags |= 1 << g;
        }
        let selected_free = members
            .iter()
            .min_by(|&&a, &&b| {
                result.per_trajectory[a]
                    .swept_cost
                    .partial_cmp(&result.per_trajectory[b].swept_cost)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            })
            .map(|&i| result.per_trajectory[i].collision_free)
            .unwrap_or(false);
        let acsm_value = if members.len() >= 2 {
            let sub: Vec<Trajectory> =
                members.iter().map(|&i| result.batch[i].clone()).collect();
            Some(acsm(&sub))
        } else {
            None
        };
        per_guide.push(GuideSceneStats { any_free, selected_free, acsm: acsm_value });
    }
    (flags, per_guide)
}

/// Plan every scene with the ensemble and aggregate the paper's metrics.
/// Scenes evaluate independently (in parallel); records are ordered by
/// scene name and per-scene seeds derive from the scene name, so the
/// report is byte-stable regardless of input order or worker count.
pub fn bench(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    chain: &ChainSpec,
    scenes: &[(Scene, SceneKind)],
    guides: &[GuideConfig],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if scenes.is_empty() {
        return Err(crate::Error::Config("benchmark needs at least one scene".into()));
    }
    let mut records: Vec<SceneRecord> = scenes
        .par_iter()
        .map(|(scene, kind)| {
            let plan_cfg = PlanConfig {
                batch: cfg.batch,
                seed: derive_seed(cfg.seed, "bench_scene", hash_label(&scene.name)),
                substeps: cfg.substeps,
                multimodality: cfg.multimodality,
            };
            let start = Instant::now();
            match plan(params, sched, scene, chain, guides, &plan_cfg) {
                Ok(result) => {
                    let (guide_flags, per_guide) = scene_stats(&result, guides.len());
                    SceneRecord {
                        name: scene.name.clone(),
                        kind: *kind,
                        success_selected: result.success_selected,
                        success_any: result.success_any,
                        guide_flags,
                        path_length: path_length(&result.selected),
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                        acsm: acsm(&result.batch),
                        roughness: roughness(&result.batch),
                        per_guide,
                        error: None,
                    }
                }
                Err(err) => SceneRecord {
                    name: scene.name.clone(),
                    kind: *kind,
                    success_selected: false,
                    success_any: false,
                    guide_flags: 0,
                    path_length: 0.0,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    acsm: 0.0,
                    roughness: Roughness::default(),
                    per_guide: vec![
                        GuideSceneStats { any_free: false, selected_free: false, acsm: None };
                        guides.len()
                    ],
                    error: Some(err.to_string()),
                },
            }
        })
        .collect();
    records.sort_by(|a, b| a.name.cmp(&b.name));
    for rec in records.iter().filter(|r| r.error.is_some()) {
        log::warn!("scene {} failed: {}", rec.name, rec.error.as_deref().unwrap_or(""));
    }

    let n = records.len() as f64;
    let rate = |f: &dyn Fn(&SceneRecord) -> bool| {
        records.iter().filter(|r| f(r)).count() as f64 / n
    };
    let mut guide_contribution = vec![0.0; guides.len()];
    let mut guide_selected_rate = vec![0.0; guides.len()];
    let mut single_acsm_sum = 0.0;
    let mut single_acsm_count = 0usize;
    for rec in &records {
        for (g, stats) in rec.per_guide.iter().enumerate() {
            guide_contribution[g] += f64::from(stats.any_free);
            guide_selected_rate[g] += f64::from(stats.selected_free);
            if let Some(a) = stats.acsm {
                single_acsm_sum += a;
                single_acsm_count += 1;
            }
        }
    }
    for v in guide_contribution.iter_mut().chain(guide_selected_rate.iter_mut()) {
        *v /= n;
    }
    let mut rough_total = Roughness::default();
    for rec in &records {
        rough_total.ar += rec.roughness.ar;
        rough_total.mresg += rec.roughness.mresg;
        rough_total.rf2w += rec.roughness.rf2w;
        rough_total.rl2w += rec.roughness.rl2w;
    }
    let aggregates = BenchAggregates {
        scenes: records.len(),
        success_selected_rate: rate(&|r| r.success_selected),
        success_any_rate: rate(&|r| r.success_any),
        mean_acsm: records.iter().map(|r| r.acsm).sum::<f64>() / n,
        mean_single_guide_acsm: if single_acsm_count > 0 {
            single_acsm_sum / single_acsm_count as f64
        } else {
            0.0
        },
        mean_path_length: records.iter().map(|r| r.path_length).sum::<f64>() / n,
        roughness: Roughness {
            ar: rough_total.ar / n,
            mresg: rough_total.mresg / n,
            rf2w: rough_total.rf2w / n,
            rl2w: rough_total.rl2w / n,
        },
        guide_contribution,
        guide_selected_rate,
    };

    let sweep_guides = cfg.sweep_guides.then(|| prefix_sweep(&records, guides.len()));

    Ok(BenchReport { records, aggregates, sweep_guides, wall_clock: cfg.wall_clock })
}

/// Success-of-any per guide-count prefix: the union of per-guide flags over
/// the first `k` guides, averaged over scenes. Non-decreasing in `k` by
/// construction.
pub fn prefix_sweep(records: &[SceneRecord], guides: usize) -> Vec<(usize, f64)> {
    (1..=guides)
        .map(|k| {
            let hits = records
                .iter()
                .filter(|r| r.per_guide[..k].iter().any(|s| s.any_free))
                .count();
            (k, hits as f64 / records.len() as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Report files.

fn csv_bool(v: bool) -> u8 {
    u8::from(v)
}

/// Write `report.csv`, `summary.csv` and (when the sweep is present)
/// `sweep_guides.csv` plus an SVG chart into `dir`.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(
        "scene,kind,success_selected,success_any,guide_flags,path_length,wall_ms\n",
    );
    for r in &report.records {
        let wall = if report.wall_clock { r.wall_ms } else { 0.0 };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            r.kind,
            csv_bool(r.success_selected),
            csv_bool(r.success_any),
            r.guide_flags,
            r.path_length,
            wall
        ));
    }
    std::fs::write(dir.join("report.csv"), csv)?;

    let a = &report.aggregates;
    let mut summary = String::from("key,value\n");
    summary.push_str(&format!("scenes,{}\n", a.scenes));
    summary.push_str(&format!("success_selected_rate,{}\n", a.success_selected_rate));
    summary.push_str(&format!("success_any_rate,{}\n", a.success_any_rate));
    summary.push_str(&format!("acsm_ensemble,{}\n", a.mean_acsm));
    summary.push_str(&format!("acsm_single_guide_mean,{}\n", a.mean_single_guide_acsm));
    summary.push_str(&format!("mean_path_length,{}\n", a.mean_path_length));
    summary.push_str(&format!("ar,{}\n", a.roughness.ar));
    summary.push_str(&format!("mresg,{}\n", a.roughness.mresg));
    summary.push_str(&format!("rf2w,{}\n", a.roughness.rf2w));
    summary.push_str(&format!("rl2w,{}\n", a.roughness.rl2w));
    for (g, (c, s)) in a.guide_contribution.iter().zip(&a.guide_selected_rate).enumerate() {
        summary.push_str(&format!("guide_{}_contribution,{}\n", g + 1, c));
        summary.push_str(&format!("guide_{}_selected_rate,{}\n", g + 1, s));
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    if let Some(sweep) = &report.sweep_guides {
        let mut csv = String::from("guide_count,success_any_rate\n");
        for (k, rate) in sweep {
            csv.push_str(&format!("{k},{rate}\n"));
        }
        std::fs::write(dir.join("sweep_guides.csv"), csv)?;
        let points: Vec<(f64, f64)> =
            sweep.iter().map(|&(k, r)| (k as f64, r)).collect();
        std::fs::write(
            dir.join("success_vs_guides.svg"),
            svg_line_chart(&points, "guides", "success rate"),
        )?;
    }
    Ok(())
}

/// A minimal standalone line chart.
pub fn svg_line_chart(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, ml, mb) = (480.0, 320.0, 50.0, 40.0);
    let x_max = points.iter().map(|p| p.0).fold(1.0f64, f64::max);
    let plot_w = w - ml - 20.0;
    let plot_h = h - mb - 20.0;
    let map = |&(x, y): &(f64, f64)| {
        (ml + x / x_max * plot_w, h - mb - y.clamp(0.0, 1.0) * plot_h)
    };
    let path: Vec<String> = points.iter().map(map).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    s.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb, w - 20.0, h - mb, h - mb
    ));
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    for p in points.iter().map(map) {
        s.push_str(&format!("<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n", p.0, p.1));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{x_label}</text>\n",
        w / 2.0,
        h - 8.0
    ));
    s.push_str(&format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">{y_label}</text>\n",
        h / 2.0,
        h / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

/// Batch straight-line check used to pre-verify feasibility of handheld
/// object scenes: the linear joint interpolation from start to goal passes
/// the oracle.
pub fn straight_line_feasible(scene: &Scene, chain: &ChainSpec, h: usize, substeps: usize) -> bool {
    let tau = Trajectory::linear(&scene.start, &scene.goal, h);
    oracle_collision_free(&tau, scene, chain, substeps)
}

#[allow(dead_code)]
fn zeros(m: usize) -> JointState {
    JointState(DVector::zeros(m))
}
