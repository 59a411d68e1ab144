//! Procedural scenes, prior-trajectory data and all scene/dataset file I/O.
//!
//! Four scene archetypes cover the benchmark: boxes resting on a tabletop,
//! high-aspect-ratio shelf stacks, cubby compartments, and fields of
//! floating cubes (spheres encoded as their bounding cubes, consistent with
//! the cuboid cost model). Prior trajectories are quintic (minimum-jerk)
//! interpolations through up to two via points, screened for joint limits
//! and self-collision; the prior deliberately knows nothing about
//! obstacles.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{self_collision, ChainSpec, JointState, Trajectory};
use crate::eval::state_collision_free;
use crate::geom::{Cuboid, Pose};
use crate::guidance::Scene;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

pub const SCENE_FORMAT: &str = "diffplan-scene-v1";
pub const DATASET_FORMAT: &str = "diffplan-dataset-v1";

/// Rejection-sampling budget for start/goal states and prior trajectories.
const MAX_ATTEMPTS: usize = 1000;

/// Peak slope of the quintic profile `10u^3 - 15u^4 + 6u^5`; the largest
/// per-segment step is this multiple of the segment's uniform step.
pub const QUINTIC_PEAK_SLOPE: f64 = 1.875;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Tabletop,
    Shelf,
    Cubby,
    SphereField,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] =
        [SceneKind::Tabletop, SceneKind::Shelf, SceneKind::Cubby, SceneKind::SphereField];

    fn id(self) -> u64 {
        match self {
            SceneKind::Tabletop => 0,
            SceneKind::Shelf => 1,
            SceneKind::Cubby => 2,
            SceneKind::SphereField => 3,
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SceneKind::Tabletop => "tabletop",
            SceneKind::Shelf => "shelf",
            SceneKind::Cubby => "cubby",
            SceneKind::SphereField => "sphere_field",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabletop" => Ok(SceneKind::Tabletop),
            "shelf" => Ok(SceneKind::Shelf),
            "cubby" => Ok(SceneKind::Cubby),
            "sphere_field" => Ok(SceneKind::SphereField),
            other => Err(Error::Config(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// Archetype parameters, versioned and embedded; override with a JSON file
/// of the same shape when experimenting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldgenParams {
    pub version: u32,
    /// Half-width of the cubic workspace (the box is `2 * workspace_half`
    /// meters across).
    pub workspace_half: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Obstacles never spawn with their center closer than this to the base.
    pub base_keepout: f64,
    /// Obstacles in the first link's sweep plane must clear this radius:
    /// the first joint is a pure yaw with no avoidance freedom, so anything
    /// inside its swept disc makes yaw-crossing scenes infeasible.
    pub sweep_keepout: f64,
    /// Shelf/cubby slab thickness range (full thickness, meters).
    pub slab_thickness: [f64; 2],
}

impl Default for WorldgenParams {
    fn default() -> Self {
        WorldgenParams {
            version: 1,
            workspace_half: 1.0,
            min_obstacles: 3,
            max_obstacles: 8,
            base_keepout: 0.45,
            sweep_keepout: 0.78,
            slab_thickness: [0.02, 0.05],
        }
    }
}

impl WorldgenParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let params: WorldgenParams = serde_json::from_str(text)?;
        if params.version != 1 {
            return Err(Error::invalid("version", "unsupported worldgen params version"));
        }
        Ok(params)
    }
}

fn yaw_pose(center: Vector3<f64>, yaw: f64) -> Pose {
    Pose::from_rpy(&Vector3::new(0.0, 0.0, yaw), center)
}

fn tabletop_obstacles(params: &WorldgenParams, rng: &mut impl Rng) -> Vec<Cuboid> {
    let n = rng.gen_range(params.min_obstacles..=params.max_obstacles);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.gen_range(-1.2..1.2) * params.workspace_half;
        let y = rng.gen_range(-1.2..1.2) * params.workspace_half;
        let half = Vector3::new(
            rng.gen_range(0.04..0.15f64),
            rng.gen_range(0.04..0.15f64),
            rng.gen_range(0.04..0.18f64),
        );
        // Resting boxes sit in the first link's sweep plane, so they must
        // clear its swept disc entirely.
        let half_diag = (half.x * half.x + half.y * half.y).sqrt();
        if (x * x + y * y).sqrt() < params.sweep_keepout + half_diag {
            continue;
        }
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        // Tabletop boxes rest on the z = 0 plane: center height equals the
        // z half extent.
        out.push(Cuboid::new(yaw_pose(Vector3::new(x, y, half.z), yaw), half));
    }
    out
}

fn shelf_obstacles(params: &WorldgenParams, rng: &mut impl Rng) -> Vec<Cuboid> {
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius = rng.gen_range(0.5..0.75);
    let center_xy = Vector3::new(yaw.cos() * radius, yaw.sin() * radius, 0.0);
    let slabs = rng.gen_range(2..=4usize);
    let th = rng.gen_range(params.slab_thickness[0]..=params.slab_thickness[1]);
    let base_z = rng.gen_range(0.15..0.3);
    let dz = rng.gen_range(0.22..0.35);
    let half = Vector3::new(0.3, 0.22, th / 2.0);
    let mut out = Vec::new();
    for s in 0..slabs {
        let z = base_z + s as f64 * dz;
        out.push(Cuboid::new(yaw_pose(center_xy + Vector3::new(0.0, 0.0, z), yaw), half));
    }
    if rng.gen_bool(0.5) {
        // A thin back panel behind the slab stack.
        let span_z = (slabs - 1) as f64 * dz + 0.1;
        let offset = Vector3::new(yaw.cos() * 0.28, yaw.sin() * 0.28, 0.0);
        out.push(Cuboid::new(
            yaw_pose(
                center_xy + offset + Vector3::new(0.0, 0.0, base_z + span_z / 2.0 - 0.05),
                yaw,
            ),
            Vector3::new(th / 2.0, 0.22, span_z / 2.0),
        ));
    }
    out
}

fn cubby_obstacles(params: &WorldgenParams, rng: &mut impl Rng) -> Vec<Cuboid> {
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius = rng.gen_range(0.5..0.75);
    let center_xy = Vector3::new(yaw.cos() * radius, yaw.sin() * radius, 0.0);
    let th = rng.gen_range(params.slab_thickness[0]..=params.slab_thickness[1]);
    let z_lo = rng.gen_range(0.15..0.3);
    let gap = rng.gen_range(0.25..0.35);
    let z_hi = z_lo + gap;
    let half_slab = Vector3::new(0.28, 0.24, th / 2.0);
    let mut out = vec![
        Cuboid::new(yaw_pose(center_xy + Vector3::new(0.0, 0.0, z_lo), yaw), half_slab),
        Cuboid::new(yaw_pose(center_xy + Vector3::new(0.0, 0.0, z_hi), yaw), half_slab),
    ];
    // Vertical dividers split the gap into compartments.
    let dividers = rng.gen_range(2..=3usize);
    let mid_z = (z_lo + z_hi) / 2.0;
    for d in 0..dividers {
        let frac = d as f64 / (dividers - 1) as f64 - 0.5;
        let lateral = frac * 0.44;
        // Lateral offset along the shelf's local y axis.
        let offset = Vector3::new(-yaw.sin() * lateral, yaw.cos() * lateral, 0.0);
        out.push(Cuboid::new(
            yaw_pose(center_xy + offset + Vector3::new(0.0, 0.0, mid_z), yaw),
            Vector3::new(0.28, th / 2.0, gap / 2.0),
        ));
    }
    out
}

fn sphere_field_obstacles(params: &WorldgenParams, rng: &mut impl Rng) -> Vec<Cuboid> {
    let n = rng.gen_range(4..=params.max_obstacles.max(4));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.gen_range(-0.9..0.9) * params.workspace_half;
        let y = rng.gen_range(-0.9..0.9) * params.workspace_half;
        // Floating cubes stay above the first link's sweep plane.
        let z = rng.gen_range(0.25..0.9f64);
        if (x * x + y * y).sqrt() < params.base_keepout {
            continue;
        }
        // Spheres become their bounding cubes under the cuboid cost model.
        let r = rng.gen_range(0.05..(z - 0.08).min(0.15));
        out.push(Cuboid::new(
            Pose::from_translation(Vector3::new(x, y, z)),
            Vector3::repeat(r),
        ));
    }
    out
}

fn sample_free_state(
    chain: &ChainSpec,
    scene_obstacles: &[Cuboid],
    rng: &mut impl Rng,
) -> Option<JointState> {
    let probe = Scene {
        name: String::new(),
        obstacles: scene_obstacles.to_vec(),
        start: JointState(DVector::zeros(chain.dof())),
        goal: JointState(DVector::zeros(chain.dof())),
    };
    for _ in 0..MAX_ATTEMPTS {
        let q = JointState(DVector::from_fn(chain.dof(), |j, _| {
            rng.gen_range(chain.joints[j].limits[0]..chain.joints[j].limits[1])
        }));
        if state_collision_free(&q, &probe, chain) {
            return Some(q);
        }
    }
    None
}

/// Generate one scene of the given archetype. Pure in `(kind, chain, seed)`;
/// fails if no collision-free start/goal pair is found within the attempt
/// budget.
pub fn gen_scene(
    kind: SceneKind,
    chain: &ChainSpec,
    params: &WorldgenParams,
    seed: u64,
) -> Result<Scene> {
    let mut rng = stream(seed, "scene", kind.id(), 0);
    let obstacles = match kind {
        SceneKind::Tabletop => tabletop_obstacles(params, &mut rng),
        SceneKind::Shelf => shelf_obstacles(params, &mut rng),
        SceneKind::Cubby => cubby_obstacles(params, &mut rng),
        SceneKind::SphereField => sphere_field_obstacles(params, &mut rng),
    };
    let fail = |what: &str| Error::Generation { seed, reason: format!("no {what} state found") };
    let start = sample_free_state(chain, &obstacles, &mut rng).ok_or_else(|| fail("start"))?;
    let goal = sample_free_state(chain, &obstacles, &mut rng).ok_or_else(|| fail("goal"))?;
    Ok(Scene { name: format!("{kind}-{seed:08x}"), obstacles, start, goal })
}

/// The quintic (minimum-jerk) ease profile.
pub fn quintic(u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    u3 * (10.0 - 15.0 * u + 6.0 * u2)
}

/// Control points of the prior trajectory drawn for `seed`: start, zero to
/// two via points, goal — all uniform within the joint limits. Exposed so
/// dataset scans can recompute the exact profile a trajectory came from.
pub fn prior_control_points(chain: &ChainSpec, seed: u64, attempt: u64) -> Vec<JointState> {
    let mut rng = stream(seed, "prior", attempt, 0);
    let vias = rng.gen_range(0..=2usize);
    (0..vias + 2)
        .map(|_| {
            JointState(DVector::from_fn(chain.dof(), |j, _| {
                rng.gen_range(chain.joints[j].limits[0]..chain.joints[j].limits[1])
            }))
        })
        .collect()
}

/// Evaluate the piecewise-quintic trajectory through the given control
/// points at `h` uniformly spaced parameters. Each segment eases in and out,
/// so velocities vanish at the control points.
pub fn quintic_trajectory(points: &[JointState], h: usize) -> Trajectory {
    assert!(points.len() >= 2);
    let m = points[0].dim();
    let segments = points.len() - 1;
    let states = DMatrix::from_fn(h, m, |k, j| {
        let u = k as f64 / (h - 1) as f64;
        // Segment index, clamped so u = 1 lands in the last segment.
        let scaled = (u * segments as f64).min(segments as f64 - 1e-12);
        let seg = scaled.floor() as usize;
        let v = scaled - seg as f64;
        let a = points[seg].0[j];
        let b = points[seg + 1].0[j];
        a + (b - a) * quintic(v)
    });
    Trajectory::new(states)
}

/// One smooth prior trajectory: quintic interpolation through 0-2 via
/// points, resampled until every waypoint is self-collision-free. Joint
/// limits hold by construction (each segment interpolates between in-limit
/// points monotonically).
pub fn gen_prior_trajectory(chain: &ChainSpec, h: usize, seed: u64) -> Result<Trajectory> {
    for attempt in 0..MAX_ATTEMPTS as u64 {
        let points = prior_control_points(chain, seed, attempt);
        let tau = quintic_trajectory(&points, h);
        let clear =
            (0..h).all(|k| !self_collision(chain, &tau.waypoint(k)));
        if clear {
            return Ok(tau);
        }
    }
    Err(Error::Generation { seed, reason: "no self-collision-free trajectory found".into() })
}

/// Generate `count` prior trajectories with per-index derived seeds.
pub fn gen_dataset(chain: &ChainSpec, h: usize, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Config("dataset needs count >= 1".into()));
    }
    use rayon::prelude::*;
    let results: Vec<Result<Trajectory>> = (0..count)
        .into_par_iter()
        .map(|i| gen_prior_trajectory(chain, h, derive_seed(seed, "dataset", i as u64)))
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.push(t),
            Err(_) => failures.push(i),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Generation {
            seed,
            reason: format!("trajectory generation failed at indices {failures:?}"),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scene files.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    center: [f64; 3],
    half_extents: [f64; 3],
    rpy: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    format: String,
    name: String,
    kind: SceneKind,
    obstacles: Vec<ObstacleFile>,
    start: Vec<f64>,
    goal: Vec<f64>,
}

pub fn scene_to_json(scene: &Scene, kind: SceneKind) -> String {
    let file = SceneFile {
        format: SCENE_FORMAT.to_string(),
        name: scene.name.clone(),
        kind,
        obstacles: scene
            .obstacles
            .iter()
            .map(|o| {
                let r = nalgebra::Rotation3::from_matrix_unchecked(o.pose.rotation);
                let (roll, pitch, yaw) = r.euler_angles();
                ObstacleFile {
                    center: [o.pose.translation.x, o.pose.translation.y, o.pose.translation.z],
                    half_extents: [o.half_extents.x, o.half_extents.y, o.half_extents.z],
                    rpy: [roll, pitch, yaw],
                }
            })
            .collect(),
        start: scene.start.0.iter().copied().collect(),
        goal: scene.goal.0.iter().copied().collect(),
    };
    serde_json::to_string_pretty(&file).expect("scene serialization cannot fail")
}

/// Parse and validate a scene document against a chain: dimensions, joint
/// limits (naming the violating joint), positive half extents, and
/// collision-free start/goal at zero clearance.
pub fn scene_from_json(text: &str, chain: &ChainSpec) -> Result<(Scene, SceneKind)> {
    let file: SceneFile = serde_json::from_str(text)?;
    if file.format != SCENE_FORMAT {
        return Err(Error::invalid(
            "format",
            format!("expected {SCENE_FORMAT:?}, got {:?}", file.format),
        ));
    }
    let m = chain.dof();
    let mut obstacles = Vec::with_capacity(file.obstacles.len());
    for (i, o) in file.obstacles.iter().enumerate() {
        let path = format!("obstacles[{i}]");
        if o.half_extents.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(Error::invalid(
                format!("{path}.half_extents"),
                format!("half extents must be strictly positive, got {:?}", o.half_extents),
            ));
        }
        if o.center.iter().chain(o.rpy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(path, "non-finite obstacle pose"));
        }
        obstacles.push(Cuboid::new(
            Pose::from_rpy(
                &Vector3::from_column_slice(&o.rpy),
                Vector3::from_column_slice(&o.center),
            ),
            Vector3::from_column_slice(&o.half_extents),
        ));
    }
    for (label, q) in [("start", &file.start), ("goal", &file.goal)] {
        if q.len() != m {
            return Err(Error::invalid(
                label,
                format!("expected {m} joint values, got {}", q.len()),
            ));
        }
        for (j, &v) in q.iter().enumerate() {
            let [lo, hi] = chain.joints[j].limits;
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::invalid(
                    format!("{label}[{j}]"),
                    format!("joint {j} value {v} outside limits [{lo}, {hi}]"),
                ));
            }
        }
    }
    let scene = Scene {
        name: file.name,
        obstacles,
        start: JointState(DVector::from_vec(file.start)),
        goal: JointState(DVector::from_vec(file.goal)),
    };
    for (label, q) in [("start", &scene.start), ("goal", &scene.goal)] {
        if !state_collision_free(q, &scene, chain) {
            return Err(Error::invalid(label, "state is in collision at zero clearance"));
        }
    }
    Ok((scene, file.kind))
}

pub fn write_scene(path: &Path, scene: &Scene, kind: SceneKind) -> Result<()> {
    std::fs::write(path, scene_to_json(scene, kind))?;
    Ok(())
}

pub fn read_scene(path: &Path, chain: &ChainSpec) -> Result<(Scene, SceneKind)> {
    scene_from_json(&std::fs::read_to_string(path)?, chain)
}

/// Load every `*.json` scene in a directory, sorted by file name.
pub fn read_scene_dir(dir: &Path, chain: &ChainSpec) -> Result<Vec<(Scene, SceneKind)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_scene(p, chain)).collect()
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON header line, then count*h*m little-endian f32.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format: String,
    pub m: usize,
    pub h: usize,
    pub count: usize,
    pub seed: u64,
    pub chain: String,
}

pub fn write_dataset(path: &Path, meta: &DatasetMeta, data: &[Trajectory]) -> Result<()> {
    if meta.count != data.len() {
        return Err(Error::Config(format!(
            "dataset meta says {} trajectories, got {}",
            meta.count,
            data.len()
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, meta)?;
    file.write_all(b"\n")?;
    for tau in data {
        debug_assert_eq!((tau.horizon(), tau.dim()), (meta.h, meta.m));
        for k in 0..meta.h {
            for j in 0..meta.m {
                file.write_all(&(tau.states()[(k, j)] as f32).to_le_bytes())?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetMeta, Vec<Trajectory>)> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let meta: DatasetMeta = serde_json::from_str(header.trim_end())?;
    if meta.format != DATASET_FORMAT {
        return Err(Error::invalid(
            "format",
            format!("expected {DATASET_FORMAT:?}, got {:?}", meta.format),
        ));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let need = meta.count * meta.h * meta.m * 4;
    if payload.len() != need {
        return Err(Error::invalid(
            "dataset",
            format!("payload holds {} bytes, header needs {need}", payload.len()),
        ));
    }
    let mut out = Vec::with_capacity(meta.count);
    let mut off = 0;
    for _ in 0..meta.count {
        let states = DMatrix::from_fn(meta.h, meta.m, |k, j| {
            let at = off + (k * meta.m + j) * 4;
            f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64
        });
        off += meta.h * meta.m * 4;
        out.push(Trajectory::new(states));
    }
    Ok((meta, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain() -> ChainSpec {
        ChainSpec::default_arm()
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let chain = chain();
        let params = WorldgenParams::default();
        for kind in SceneKind::ALL {
            let a = gen_scene(kind, &chain, &params, 7).unwrap();
            let b = gen_scene(kind, &chain, &params, 7).unwrap();
            assert_eq!(scene_to_json(&a, kind), scene_to_json(&b, kind));
            let c = gen_scene(kind, &chain, &params, 8).unwrap();
            assert_ne!(scene_to_json(&a, kind), scene_to_json(&c, kind));
        }
    }

    #[test]
    fn tabletop_obstacles_rest_on_the_plane() {
        let chain = chain();
        let params = WorldgenParams::default();
        for seed in 0..10 {
            let scene = gen_scene(SceneKind::Tabletop, &chain, &params, seed).unwrap();
            assert!(scene.obstacles.len() >= params.min_obstacles);
            for o in &scene.obstacles {
                assert_relative_eq!(o.pose.translation.z, o.half_extents.z, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shelf_scenes_contain_a_high_aspect_slab() {
        let chain = chain();
        let params = WorldgenParams::default();
        for seed in 0..10 {
            let scene = gen_scene(SceneKind::Shelf, &chain, &params, seed).unwrap();
            let high_aspect = scene.obstacles.iter().any(|o| {
                let h = o.half_extents;
                h.max() / h.min() >= 10.0
            });
            assert!(high_aspect, "seed {seed} produced no thin slab");
        }
    }

    #[test]
    fn sphere_field_boxes_are_cubes() {
        let chain = chain();
        let params = WorldgenParams::default();
        for seed in 0..10 {
            let scene = gen_scene(SceneKind::SphereField, &chain, &params, seed).unwrap();
            for o in &scene.obstacles {
                assert_eq!(o.half_extents.x, o.half_extents.y);
                assert_eq!(o.half_extents.y, o.half_extents.z);
            }
        }
    }

    #[test]
    fn generated_scenes_have_valid_endpoints() {
        let chain = chain();
        let params = WorldgenParams::default();
        for kind in SceneKind::ALL {
            for seed in 0..5 {
                let scene = gen_scene(kind, &chain, &params, seed).unwrap();
                assert!(state_collision_free(&scene.start, &scene, &chain));
                assert!(state_collision_free(&scene.goal, &scene, &chain));
            }
        }
    }

    #[test]
    fn quintic_profile_properties() {
        assert_eq!(quintic(0.0), 0.0);
        assert_relative_eq!(quintic(1.0), 1.0, epsilon = 1e-15);
        // Zero velocity at both ends, peak slope 1.875 at the middle.
        let d = |u: f64| (quintic(u + 1e-6) - quintic(u - 1e-6)) / 2e-6;
        assert!(d(1e-6).abs() < 1e-5);
        assert!(d(1.0 - 1e-6).abs() < 1e-5);
        assert_relative_eq!(d(0.5), QUINTIC_PEAK_SLOPE, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_prior_trajectory_is_constant() {
        let q = JointState::from_vec(vec![0.3, -0.2, 0.9]);
        let tau = quintic_trajectory(&[q.clone(), q.clone()], 20);
        for k in 0..20 {
            assert_relative_eq!(tau.waypoint(k).0, q.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn two_point_trajectory_follows_the_quintic_profile() {
        let a = JointState::from_vec(vec![-1.0, 0.0, 2.0]);
        let b = JointState::from_vec(vec![1.0, 0.5, -1.0]);
        let h = 50;
        let tau = quintic_trajectory(&[a.clone(), b.clone()], h);
        for k in 0..h {
            let u = k as f64 / (h - 1) as f64;
            let s = quintic(u);
            for j in 0..3 {
                assert_relative_eq!(
                    tau.states()[(k, j)],
                    a.0[j] + (b.0[j] - a.0[j]) * s,
                    epsilon = 1e-12
                );
            }
        }
        // Monotone per joint when start < goal.
        for k in 0..h - 1 {
            assert!(tau.states()[(k + 1, 0)] >= tau.states()[(k, 0)]);
        }
        // Endpoints hit exactly.
        assert_relative_eq!(tau.waypoint(0).0, a.0, epsilon = 1e-14);
        assert_relative_eq!(tau.waypoint(h - 1).0, b.0, epsilon = 1e-14);
    }

    /// Every step stays below the quintic peak-slope multiple of the
    /// owning segment's uniform step.
    #[test]
    fn dataset_steps_respect_the_quintic_bound() {
        let chain = chain();
        let h = 50;
        let data = gen_dataset(&chain, h, 64, 3).unwrap();
        for (i, tau) in data.iter().enumerate() {
            // Recompute the control points this trajectory came from; the
            // accepted attempt is the first self-collision-free one.
            let seed = derive_seed(3, "dataset", i as u64);
            let mut points = None;
            for attempt in 0..MAX_ATTEMPTS as u64 {
                let candidate = prior_control_points(&chain, seed, attempt);
                let t = quintic_trajectory(&candidate, h);
                if (0..h).all(|k| !self_collision(&chain, &t.waypoint(k))) {
                    assert_eq!(t, *tau);
                    points = Some(candidate);
                    break;
                }
            }
            let points = points.expect("control points must be recoverable");
            let segments = points.len() - 1;
            let max_seg_span = (0..segments)
                .map(|s| (points[s + 1].0.clone() - points[s].0.clone()).norm())
                .fold(0.0f64, f64::max);
            let uniform = max_seg_span * segments as f64 / (h as f64 - 1.0);
            let max_step = (0..h - 1)
                .map(|k| (tau.waypoint(k + 1).0 - tau.waypoint(k).0).norm())
                .fold(0.0f64, f64::max);
            assert!(
                max_step <= QUINTIC_PEAK_SLOPE * uniform + 1e-9,
                "trajectory {i}: step {max_step} vs bound {}",
                QUINTIC_PEAK_SLOPE * uniform
            );
        }
    }

    #[test]
    fn dataset_round_trip_and_size() {
        let chain = chain();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.traj");
        let data = gen_dataset(&chain, 10, 3, 1).unwrap();
        let meta = DatasetMeta {
            format: DATASET_FORMAT.into(),
            m: 3,
            h: 10,
            count: 3,
            seed: 1,
            chain: "default".into(),
        };
        write_dataset(&path, &meta, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(bytes.len(), header_len + 3 * 10 * 3 * 4);

        let (meta2, data2) = read_dataset(&path).unwrap();
        assert_eq!(meta2, meta);
        for (a, b) in data.iter().zip(&data2) {
            for (x, y) in a.states().iter().zip(b.states().iter()) {
                // Values survive the f32 narrowing.
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-6 + 1e-6);
            }
        }

        // Bit-identical regeneration.
        let again = gen_dataset(&chain, 10, 3, 1).unwrap();
        let path2 = dir.path().join("data2.traj");
        write_dataset(&path2, &meta, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn dataset_screens_limits_and_self_collision() {
        let chain = chain();
        let data = gen_dataset(&chain, 24, 200, 5).unwrap();
        for tau in &data {
            for k in 0..tau.horizon() {
                let q = tau.waypoint(k);
                for j in 0..chain.dof() {
                    let [lo, hi] = chain.joints[j].limits;
                    assert!(q.0[j] >= lo - 1e-12 && q.0[j] <= hi + 1e-12);
                }
                assert!(!self_collision(&chain, &q));
            }
        }
    }

    #[test]
    fn scene_file_round_trip() {
        let chain = chain();
        let params = WorldgenParams::default();
        let scene = gen_scene(SceneKind::Cubby, &chain, &params, 11).unwrap();
        let text = scene_to_json(&scene, SceneKind::Cubby);
        let (back, kind) = scene_from_json(&text, &chain).unwrap();
        assert_eq!(kind, SceneKind::Cubby);
        assert_eq!(back.name, scene.name);
        assert_eq!(back.obstacles.len(), scene.obstacles.len());
        for (a, b) in scene.obstacles.iter().zip(&back.obstacles) {
            assert_relative_eq!(a.pose.translation, b.pose.translation, epsilon = 1e-12);
            assert_relative_eq!(a.pose.rotation, b.pose.rotation, epsilon = 1e-12);
            assert_relative_eq!(a.half_extents, b.half_extents, epsilon = 1e-12);
        }
        assert_eq!(back.start.0, scene.start.0);
        assert_eq!(back.goal.0, scene.goal.0);
    }

    #[test]
    fn scene_file_rejects_bad_fields() {
        let chain = chain();
        let params = WorldgenParams::default();
        let scene = gen_scene(SceneKind::Tabletop, &chain, &params, 2).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&scene_to_json(&scene, SceneKind::Tabletop)).unwrap();
        doc["obstacles"][0]["half_extents"][1] = serde_json::json!(-0.1);
        let err = scene_from_json(&doc.to_string(), &chain).unwrap_err();
        assert!(err.to_string().contains("obstacles[0].half_extents"), "{err}");

        let mut doc: serde_json::Value =
            serde_json::from_str(&scene_to_json(&scene, SceneKind::Tabletop)).unwrap();
        doc["start"][1] = serde_json::json!(9.0);
        let err = scene_from_json(&doc.to_string(), &chain).unwrap_err();
        assert!(err.to_string().contains("start[1]"), "{err}");

        let mut doc: serde_json::Value =
            serde_json::from_str(&scene_to_json(&scene, SceneKind::Tabletop)).unwrap();
        doc["extra"] = serde_json::json!(true);
        assert!(scene_from_json(&doc.to_string(), &chain).is_err());
    }
}
