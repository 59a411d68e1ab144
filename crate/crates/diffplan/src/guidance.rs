//! Collision-cost guidance and the ensemble planner.
//!
//! Each guide configures one differentiable collision cost (per-waypoint
//! intersection volume or adjacent-waypoint swept volume) together with an
//! obstacle clearance schedule, an expansion policy, a gradient
//! normalization flag and a weight schedule. During reverse diffusion every
//! sub-batch of trajectories is steered by its own guide: the posterior
//! mean is clipped to the joint limits, the guide gradient is subtracted
//! from it, noise is added, and the endpoints are re-pinned. After the last
//! step the trajectory with the minimum swept volume wins.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{clip_trajectory, fk_grad, ChainSpec, JointState, Trajectory};
use crate::diffusion::{
    condition_endpoints, normal_matrix, posterior_mean, DenoiserParams, DiffusionSchedule,
};
use crate::geom::{
    extents_with_args, inflate, overlap_volume_grad, swept_extents_with_args, vertices, Cuboid,
    Extents, ExpansionPolicy,
};
use crate::rng::stream;
use crate::{Error, Result};

/// Softmax temperature for the contrastive similarity cost. The literal
/// cross entropy against the identity is identically zero (the diagonal of
/// a cosine-similarity matrix is 1), so the rows are softmaxed first.
pub const SIMILARITY_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Intersection,
    Swept,
}

/// Obstacle clearance over the denoising schedule; `linear` decays from
/// `hi` at `t = T` down to `lo` at the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClearanceSchedule {
    Constant { value: f64 },
    Linear { hi: f64, lo: f64 },
}

impl ClearanceSchedule {
    pub fn at(&self, t: usize, total: usize) -> f64 {
        match *self {
            ClearanceSchedule::Constant { value } => value,
            ClearanceSchedule::Linear { hi, lo } => lo + (hi - lo) * t as f64 / total as f64,
        }
    }
}

/// Guidance weight over the denoising schedule; `affine` is
/// `base + slope * t / T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSchedule {
    Constant { value: f64 },
    Affine { base: f64, slope: f64 },
}

impl WeightSchedule {
    pub fn at(&self, t: usize, total: usize) -> f64 {
        match *self {
            WeightSchedule::Constant { value } => value,
            WeightSchedule::Affine { base, slope } => base + slope * t as f64 / total as f64,
        }
    }
}

/// One guide of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideConfig {
    pub cost: CostKind,
    pub clearance: ClearanceSchedule,
    pub expansion: ExpansionPolicy,
    pub normalize: bool,
    pub weight: WeightSchedule,
}

impl GuideConfig {
    /// The default twelve-guide ensemble: five intersection-volume guides
    /// with unnormalized affine weights and varying clearances, then seven
    /// swept-volume guides with expansion policies and (mostly) normalized
    /// constant weights.
    pub fn default_ensemble() -> Vec<GuideConfig> {
        let affine = WeightSchedule::Affine { base: 1.4, slope: 1.0 };
        let inter = |value: f64| GuideConfig {
            cost: CostKind::Intersection,
            clearance: ClearanceSchedule::Constant { value },
            expansion: ExpansionPolicy::None,
            normalize: false,
            weight: affine,
        };
        let swept = |clearance: f64, expansion, weight: f64| GuideConfig {
            cost: CostKind::Swept,
            clearance: ClearanceSchedule::Constant { value: clearance },
            expansion,
            normalize: true,
            weight: WeightSchedule::Constant { value: weight },
        };
        vec![
            inter(0.1),
            inter(0.05),
            inter(0.01),
            inter(0.15),
            GuideConfig {
                clearance: ClearanceSchedule::Linear { hi: 0.15, lo: 0.01 },
                ..inter(0.0)
            },
            GuideConfig {
                normalize: false,
                weight: affine,
                ..swept(0.06, ExpansionPolicy::Type1, 0.0)
            },
            swept(0.0, ExpansionPolicy::Type2, 0.05),
            swept(0.0, ExpansionPolicy::Type2, 0.01),
            swept(0.02, ExpansionPolicy::Type2, 0.1),
            swept(0.1, ExpansionPolicy::Type2, 0.1),
            swept(0.05, ExpansionPolicy::Type3, 0.05),
            swept(0.05, ExpansionPolicy::Type3, 0.1),
        ]
    }
}

pub const GUIDES_FORMAT: &str = "diffplan-guides-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GuidesFile {
    format: String,
    guides: Vec<GuideConfig>,
}

pub fn guides_from_json(text: &str) -> Result<Vec<GuideConfig>> {
    let file: GuidesFile = serde_json::from_str(text)?;
    if file.format != GUIDES_FORMAT {
        return Err(Error::invalid(
            "format",
            format!("expected {GUIDES_FORMAT:?}, got {:?}", file.format),
        ));
    }
    if file.guides.is_empty() {
        return Err(Error::invalid("guides", "at least one guide is required"));
    }
    for (i, g) in file.guides.iter().enumerate() {
        let bad = |what: &str| Error::invalid(format!("guides[{i}]"), what.to_string());
        match g.clearance {
            ClearanceSchedule::Constant { value } if value < 0.0 => {
                return Err(bad("clearance must be non-negative"))
            }
            ClearanceSchedule::Linear { hi, lo } if hi < 0.0 || lo < 0.0 => {
                return Err(bad("clearance endpoints must be non-negative"))
            }
            _ => {}
        }
        if let WeightSchedule::Constant { value } = g.weight {
            if value < 0.0 {
                return Err(bad("weight must be non-negative"));
            }
        }
    }
    Ok(file.guides)
}

pub fn guides_to_json(guides: &[GuideConfig]) -> String {
    serde_json::to_string_pretty(&GuidesFile {
        format: GUIDES_FORMAT.to_string(),
        guides: guides.to_vec(),
    })
    .expect("guide serialization cannot fail")
}

pub fn read_guides(path: &std::path::Path) -> Result<Vec<GuideConfig>> {
    guides_from_json(&std::fs::read_to_string(path)?)
}

/// A planning problem: oriented cuboid obstacles plus start and goal
/// joint states.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub obstacles: Vec<Cuboid>,
    pub start: JointState,
    pub goal: JointState,
}

fn inflated_extents(
    scene: &Scene,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> Vec<Extents> {
    scene
        .obstacles
        .iter()
        .map(|o| {
            let inflated = inflate(o, clearance, expansion, t, total);
            extents_with_args(&vertices(&inflated)).extents
        })
        .collect()
}

/// Sum over waypoints, links and obstacles of the overlap volume between
/// the link's bounding box and the inflated obstacle's bounding box.
pub fn j_inter(
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> f64 {
    j_inter_grad(tau, scene, chain, clearance, expansion, t, total).0
}

/// Like [`j_inter`] but over the box enclosing each link's two consecutive
/// poses, summed over adjacent waypoint pairs: penalizes tunneling through
/// thin obstacles between waypoints.
pub fn j_swept(
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> f64 {
    j_swept_grad(tau, scene, chain, clearance, expansion, t, total).0
}

/// Per-waypoint link extents with argmin/argmax provenance and vertex
/// Jacobians, the shared ingredients of both cost gradients.
struct WaypointGeometry {
    exts: Vec<crate::geom::ExtentsWithArgs>,
    jac: Vec<Vec<[nalgebra::Vector3<f64>; 8]>>,
}

fn waypoint_geometry(chain: &ChainSpec, tau: &Trajectory, k: usize) -> WaypointGeometry {
    let g = fk_grad(chain, &tau.waypoint(k));
    let exts = g.cuboids.iter().map(|c| extents_with_args(&vertices(c))).collect();
    WaypointGeometry { exts, jac: g.vertex_jac }
}

/// Accumulate `d cost / d q(row)` for one body's extents gradient.
fn accumulate_extents_grad(
    grad_row: &mut [f64],
    ext: &crate::geom::ExtentsWithArgs,
    jac: &[[nalgebra::Vector3<f64>; 8]],
    d_lo: &nalgebra::Vector3<f64>,
    d_hi: &nalgebra::Vector3<f64>,
) {
    for axis in 0..3 {
        if d_lo[axis] != 0.0 {
            let vi = ext.arg_lo[axis];
            for (j, jac_j) in jac.iter().enumerate() {
                grad_row[j] += d_lo[axis] * jac_j[vi][axis];
            }
        }
        if d_hi[axis] != 0.0 {
            let vi = ext.arg_hi[axis];
            for (j, jac_j) in jac.iter().enumerate() {
                grad_row[j] += d_hi[axis] * jac_j[vi][axis];
            }
        }
    }
}

pub fn j_inter_grad(
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> (f64, DMatrix<f64>) {
    let h = tau.horizon();
    let m = tau.dim();
    let obstacles = inflated_extents(scene, clearance, expansion, t, total);
    let mut cost = 0.0;
    let mut grad = DMatrix::zeros(h, m);
    let mut row = vec![0.0; m];
    for k in 0..h {
        let geo = waypoint_geometry(chain, tau, k);
        row.fill(0.0);
        for (body, ext) in geo.exts.iter().enumerate() {
            for obs in &obstacles {
                let (v, g_body, _) = overlap_volume_grad(&ext.extents, obs);
                if v == 0.0 {
                    continue;
                }
                cost += v;
                accumulate_extents_grad(&mut row, ext, &geo.jac[body], &g_body.d_lo, &g_body.d_hi);
            }
        }
        for j in 0..m {
            grad[(k, j)] = row[j];
        }
    }
    (cost, grad)
}

pub fn j_swept_grad(
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> (f64, DMatrix<f64>) {
    let h = tau.horizon();
    let m = tau.dim();
    let obstacles = inflated_extents(scene, clearance, expansion, t, total);
    let mut cost = 0.0;
    let mut grad = DMatrix::zeros(h, m);
    let mut row_prev = vec![0.0; m];
    let mut row_next = vec![0.0; m];
    let mut prev = waypoint_geometry(chain, tau, 0);
    for k in 0..h - 1 {
        let next = waypoint_geometry(chain, tau, k + 1);
        for body in 0..prev.exts.len() {
            let (sw, args) =
                swept_extents_with_args(&prev.exts[body].extents, &next.exts[body].extents);
            for obs in &obstacles {
                let (v, g_sw, _) = overlap_volume_grad(&sw, obs);
                if v == 0.0 {
                    continue;
                }
                cost += v;
                // Route each axis bound to whichever waypoint owns it.
                let mut d_lo_prev = nalgebra::Vector3::zeros();
                let mut d_lo_next = nalgebra::Vector3::zeros();
                let mut d_hi_prev = nalgebra::Vector3::zeros();
                let mut d_hi_next = nalgebra::Vector3::zeros();
                for axis in 0..3 {
                    if args.lo_from_a[axis] {
                        d_lo_prev[axis] = g_sw.d_lo[axis];
                    } else {
                        d_lo_next[axis] = g_sw.d_lo[axis];
                    }
                    if args.hi_from_a[axis] {
                        d_hi_prev[axis] = g_sw.d_hi[axis];
                    } else {
                        d_hi_next[axis] = g_sw.d_hi[axis];
                    }
                }
                row_prev.fill(0.0);
                row_next.fill(0.0);
                accumulate_extents_grad(
                    &mut row_prev,
                    &prev.exts[body],
                    &prev.jac[body],
                    &d_lo_prev,
                    &d_hi_prev,
                );
                accumulate_extents_grad(
                    &mut row_next,
                    &next.exts[body],
                    &next.jac[body],
                    &d_lo_next,
                    &d_hi_next,
                );
                for j in 0..m {
                    grad[(k, j)] += row_prev[j];
                    grad[(k + 1, j)] += row_next[j];
                }
            }
        }
        prev = next;
    }
    (cost, grad)
}

/// The gradient a guide applies at step `t`: cost gradient with the
/// endpoint rows zeroed, optionally rescaled to unit Frobenius norm, then
/// multiplied by the weight schedule.
pub fn guide_gradient(
    cfg: &GuideConfig,
    tau: &Trajectory,
    scene: &Scene,
    chain: &ChainSpec,
    t: usize,
    total: usize,
) -> DMatrix<f64> {
    let clearance = cfg.clearance.at(t, total);
    let (_, mut grad) = match cfg.cost {
        CostKind::Intersection => {
            j_inter_grad(tau, scene, chain, clearance, cfg.expansion, t, total)
        }
        CostKind::Swept => j_swept_grad(tau, scene, chain, clearance, cfg.expansion, t, total),
    };
    let h = tau.horizon();
    for j in 0..tau.dim() {
        grad[(0, j)] = 0.0;
        grad[(h - 1, j)] = 0.0;
    }
    if cfg.normalize {
        let norm = grad.norm();
        if norm > 0.0 {
            grad /= norm;
        }
    }
    grad * cfg.weight.at(t, total)
}

// ---------------------------------------------------------------------------
// Multimodality (contrastive similarity) cost.

/// The literal cross entropy between a cosine-similarity matrix and the
/// identity, `-sum_i ln C_ii`. The diagonal of a cosine-similarity matrix
/// is 1, so this evaluates to exactly zero on every batch; kept as a
/// regression witness for why the implemented cost softmaxes first.
pub fn literal_contrastive_cost(batch: &[Trajectory]) -> f64 {
    batch.iter().map(|_| -(1.0f64.ln())).sum()
}

/// Pairwise cosine similarities of flattened trajectories; zero-norm
/// trajectories have similarity 0 to everything, diagonal fixed at 1.
fn cosine_matrix(batch: &[Trajectory]) -> (DMatrix<f64>, Vec<f64>) {
    let b = batch.len();
    let norms: Vec<f64> = batch.iter().map(|t| t.states().norm()).collect();
    let mut c = DMatrix::identity(b, b);
    for i in 0..b {
        for j in i + 1..b {
            let sim = if norms[i] > 0.0 && norms[j] > 0.0 {
                batch[i].states().dot(batch[j].states()) / (norms[i] * norms[j])
            } else {
                0.0
            };
            c[(i, j)] = sim;
            c[(j, i)] = sim;
        }
    }
    (c, norms)
}

/// Contrastive diversity cost over a batch: row-softmax (temperature
/// [`SIMILARITY_TEMPERATURE`]) of the cosine-similarity matrix, cross
/// entropy against the identity, and its exact gradient with respect to
/// every trajectory. High when trajectories are alike, low when diverse;
/// descending it spreads the batch apart.
pub fn multimodality_cost(batch: &[Trajectory]) -> (f64, Vec<DMatrix<f64>>) {
    let b = batch.len();
    assert!(b >= 2, "multimodality cost needs at least two trajectories");
    let (c, norms) = cosine_matrix(batch);
    let tau = SIMILARITY_TEMPERATURE;

    // Row softmax of C / tau.
    let mut p = DMatrix::zeros(b, b);
    for i in 0..b {
        let max = (0..b).map(|j| c[(i, j)] / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..b {
            let e = ((c[(i, j)] / tau) - max).exp();
            p[(i, j)] = e;
            z += e;
        }
        for j in 0..b {
            p[(i, j)] /= z;
        }
    }
    let cost: f64 = (0..b).map(|i| -p[(i, i)].ln()).sum();

    // dL/dC_ij for i != j collects the softmax-cross-entropy terms of both
    // rows; the diagonal is constant and carries nothing.
    let mut grads: Vec<DMatrix<f64>> = Vec::with_capacity(b);
    let h = batch[0].horizon();
    let m = batch[0].dim();
    for i in 0..b {
        let mut g = DMatrix::zeros(h, m);
        if norms[i] > 0.0 {
            for j in 0..b {
                if j == i || norms[j] == 0.0 {
                    continue;
                }
                let w = (p[(i, j)] + p[(j, i)]) / tau;
                if w == 0.0 {
                    continue;
                }
                // dC_ij/du_i = u_j/(r_i r_j) - C_ij u_i / r_i^2
                let coeff_j = w / (norms[i] * norms[j]);
                let coeff_i = -w * c[(i, j)] / (norms[i] * norms[i]);
                g += batch[j].states() * coeff_j + batch[i].states() * coeff_i;
            }
        }
        grads.push(g);
    }
    (cost, grads)
}

// ---------------------------------------------------------------------------
// The guided planner.

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub batch: usize,
    pub seed: u64,
    /// Interpolation substeps for the per-trajectory collision oracle.
    pub substeps: usize,
    /// Multiplier for the multimodality gradient; `None` disables it.
    pub multimodality: Option<f64>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { batch: 120, seed: 0, substeps: 8, multimodality: None }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub guide: usize,
    pub swept_cost: f64,
    pub collision_free: bool,
    /// True if a non-finite guide gradient forced an unguided step at any
    /// point for this trajectory.
    pub guided_fallback: bool,
}

#[derive(Debug, Clone, Default)]
pub struct PlanTimings {
    pub total: Duration,
    pub denoise: Duration,
    pub guidance: Duration,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub selected: Trajectory,
    pub selected_index: usize,
    pub batch: Vec<Trajectory>,
    pub per_trajectory: Vec<TrajectoryRecord>,
    pub timings: PlanTimings,
    /// The selected trajectory passes the collision oracle.
    pub success_selected: bool,
    /// Some trajectory in the batch passes the collision oracle.
    pub success_any: bool,
}

/// Sub-batch sizes: `batch / n` each, with the first `batch % n` sub-batches
/// taking one extra trajectory.
pub fn sub_batch_sizes(batch: usize, guides: usize) -> Vec<usize> {
    let base = batch / guides;
    let extra = batch % guides;
    (0..guides).map(|i| base + usize::from(i < extra)).collect()
}

fn guide_of_index(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (g, &n) in sizes.iter().enumerate() {
        out.extend(std::iter::repeat(g).take(n));
    }
    out
}

/// Run the full guided reverse diffusion for one scene.
///
/// All noise comes from streams keyed by trajectory index and timestep, so
/// the result is byte-identical for any worker count, and a run with `k`
/// guides shares the evolution of its first sub-batches with a run over a
/// guide prefix of the same per-sub-batch size.
pub fn plan(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    scene: &Scene,
    chain: &ChainSpec,
    guides: &[GuideConfig],
    cfg: &PlanConfig,
) -> Result<PlanResult> {
    if guides.is_empty() {
        return Err(Error::Config("the planner needs at least one guide".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let h = params.config().h;
    let m = params.config().m;
    if m != chain.dof() {
        return Err(Error::Config(format!(
            "checkpoint expects m={m} but the chain has {} joints",
            chain.dof()
        )));
    }
    if scene.start.dim() != m || scene.goal.dim() != m {
        return Err(Error::Config("scene start/goal dimension mismatch".into()));
    }
    for (label, q) in [("start", &scene.start), ("goal", &scene.goal)] {
        if !crate::eval::state_collision_free(q, scene, chain) {
            return Err(Error::Generation {
                seed: cfg.seed,
                reason: format!("scene {label} state is in collision for this chain"),
            });
        }
    }

    let started = Instant::now();
    let mut timings = PlanTimings::default();
    let total = sched.timesteps();
    let sizes = sub_batch_sizes(cfg.batch, guides.len());
    let assignment = guide_of_index(&sizes);

    let mut batch: Vec<Trajectory> = (0..cfg.batch)
        .map(|i| {
            let mut rng = stream(cfg.seed, "plan_init", i as u64, 0);
            condition_endpoints(
                &Trajectory::new(normal_matrix(h, m, &mut rng)),
                &scene.start,
                &scene.goal,
            )
        })
        .collect();
    let mut fallback = vec![false; cfg.batch];

    for t in (1..=total).rev() {
        let denoise_start = Instant::now();
        let mus: Vec<Trajectory> = batch
            .par_iter()
            .map(|x| -> Result<Trajectory> {
                let eps_hat = params.predict(x, t)?;
                Ok(clip_trajectory(
                    &Trajectory::new(posterior_mean(x, &eps_hat, t, sched)),
                    chain,
                ))
            })
            .collect::<Result<_>>()?;
        timings.denoise += denoise_start.elapsed();

        let guidance_start = Instant::now();
        let mut grads: Vec<Option<DMatrix<f64>>> = assignment
            .par_iter()
            .zip(&mus)
            .map(|(&g, mu)| {
                let grad = guide_gradient(&guides[g], mu, scene, chain, t, total);
                if grad.iter().all(|v| v.is_finite()) {
                    Some(grad)
                } else {
                    None
                }
            })
            .collect();
        if let Some(mult) = cfg.multimodality {
            let (_, mm) = multimodality_cost(&mus);
            for (i, g) in grads.iter_mut().enumerate() {
                if let Some(grad) = g {
                    let mut extra = mm[i].clone() * mult;
                    for j in 0..m {
                        extra[(0, j)] = 0.0;
                        extra[(h - 1, j)] = 0.0;
                    }
                    *grad += extra;
                }
            }
        }
        timings.guidance += guidance_start.elapsed();

        batch = mus
            .into_iter()
            .enumerate()
            .map(|(i, mu)| {
                let mean = match &grads[i] {
                    Some(g) => Trajectory::new(mu.states() - g),
                    None => {
                        fallback[i] = true;
                        mu
                    }
                };
                let stepped = if t > 1 {
                    let mut zrng = stream(cfg.seed, "plan_z", t as u64, i as u64);
                    let z = normal_matrix(h, m, &mut zrng);
                    Trajectory::new(mean.states() + z * sched.sigma(t))
                } else {
                    mean
                };
                condition_endpoints(&stepped, &scene.start, &scene.goal)
            })
            .collect();
    }

    let records: Vec<TrajectoryRecord> = batch
        .par_iter()
        .enumerate()
        .map(|(i, tau)| {
            let swept_cost =
                j_swept(tau, scene, chain, 0.0, ExpansionPolicy::None, 1, total);
            let collision_free =
                crate::eval::oracle_collision_free(tau, scene, chain, cfg.substeps);
            TrajectoryRecord {
                guide: assignment[i],
                swept_cost,
                collision_free,
                guided_fallback: fallback[i],
            }
        })
        .collect();

    let selected_index = records
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.swept_cost
                .partial_cmp(&b.swept_cost)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .expect("batch is non-empty");

    timings.total = started.elapsed();
    Ok(PlanResult {
        selected: batch[selected_index].clone(),
        selected_index,
        success_selected: records[selected_index].collision_free,
        success_any: records.iter().any(|r| r.collision_free),
        batch,
        per_trajectory: records,
        timings,
    })
}
