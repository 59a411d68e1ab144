//! Oriented-cuboid geometry: vertex expansion, axis-aligned extents,
//! overlap and swept volumes, and obstacle inflation.
//!
//! The collision cost treats every body as the axis-aligned bounding box of
//! its oriented cuboid. The overlap volume of two extents is the product of
//! the per-axis overlaps, clamped at zero so disjoint boxes contribute
//! nothing (the raw absolute-value form would report positive "overlap" for
//! separated boxes). All operations are pure and carry hand-derived
//! subgradients routed through the active min/max branches, so costs built
//! on top of them are differentiable with respect to vertex positions.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

// serde lives on ExpansionPolicy only; geometry values themselves are
// serialized through the explicit file schemas in `worldgen` and `chain`.

/// Relative widening floor for expansion types I/II: axes thinner than
/// `EXPANSION_RATIO * max_half_extent` are raised toward that floor.
pub const EXPANSION_RATIO: f64 = 0.25;
/// Absolute widening applied to the thinnest axis under expansion type III.
pub const EXPANSION_DELTA: f64 = 0.1;

/// Tolerance for the rotation orthonormality check.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform: orthonormal rotation (det +1) plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose { rotation: Matrix3::identity(), translation }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// Rotation about a unit axis by `angle` radians (Rodrigues form).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        )
        .into_inner();
        Pose { rotation, translation: Vector3::zeros() }
    }

    /// Roll-pitch-yaw (X, then Y, then Z) rotation with a translation.
    pub fn from_rpy(rpy: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner();
        Pose { rotation, translation }
    }

    /// `self` then `other`, i.e. the transform mapping `other`-local points
    /// through `other` into `self`'s frame and then to the world.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// The 4x4 homogeneous matrix of this transform.
    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Deviation of `rotation` from a proper orthonormal matrix:
    /// `max(|R^T R - I|_max, |det R - 1|)`.
    pub fn rotation_defect(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let gram_err = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        gram_err.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid_rotation(&self) -> bool {
        self.rotation_defect() <= ROTATION_TOL
    }
}

/// An oriented box: pose plus strictly positive half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
}

impl Cuboid {
    /// Panics if any half extent is not strictly positive; file loaders
    /// validate before constructing.
    pub fn new(pose: Pose, half_extents: Vector3<f64>) -> Self {
        assert!(
            half_extents.iter().all(|&h| h > 0.0),
            "cuboid half extents must be strictly positive, got {half_extents:?}"
        );
        Cuboid { pose, half_extents }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }
}

/// Sign pattern of the eight corners, Gray-code order:
/// (---, +--, -+-, ++-, --+, +-+, -++, +++).
pub const VERTEX_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// The eight world-frame corners of a cuboid, in [`VERTEX_SIGNS`] order.
pub fn vertices(c: &Cuboid) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (v, signs) in out.iter_mut().zip(VERTEX_SIGNS.iter()) {
        let local = Vector3::new(
            signs[0] * c.half_extents.x,
            signs[1] * c.half_extents.y,
            signs[2] * c.half_extents.z,
        );
        *v = c.pose.apply(&local);
    }
    out
}

/// Componentwise lower/upper bounds of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extents {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Extents {
    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).iter().product()
    }
}

/// Componentwise min/max over eight corners.
pub fn extents(vs: &[Vector3<f64>; 8]) -> Extents {
    extents_with_args(vs).extents
}

/// Extents plus, per axis, the index of the vertex achieving each bound.
/// The indices are what gradients route through: only the extreme vertex
/// of the active branch receives the derivative (ties go to the lowest
/// index, deterministically).
#[derive(Debug, Clone, Copy)]
pub struct ExtentsWithArgs {
    pub extents: Extents,
    pub arg_lo: [usize; 3],
    pub arg_hi: [usize; 3],
}

pub fn extents_with_args(vs: &[Vector3<f64>; 8]) -> ExtentsWithArgs {
    let mut lo = vs[0];
    let mut hi = vs[0];
    let mut arg_lo = [0usize; 3];
    let mut arg_hi = [0usize; 3];
    for (i, v) in vs.iter().enumerate().skip(1) {
        for axis in 0..3 {
            if v[axis] < lo[axis] {
                lo[axis] = v[axis];
                arg_lo[axis] = i;
            }
            if v[axis] > hi[axis] {
                hi[axis] = v[axis];
                arg_hi[axis] = i;
            }
        }
    }
    ExtentsWithArgs { extents: Extents { lo, hi }, arg_lo, arg_hi }
}

/// Overlap volume of two extents: per axis
/// `max(0, min(a.hi, b.hi) - max(a.lo, b.lo))`, multiplied over the axes.
/// Zero exactly when the boxes are disjoint on some axis.
pub fn overlap_volume(a: &Extents, b: &Extents) -> f64 {
    let mut v = 1.0;
    for axis in 0..3 {
        let o = a.hi[axis].min(b.hi[axis]) - a.lo[axis].max(b.lo[axis]);
        if o <= 0.0 {
            return 0.0;
        }
        v *= o;
    }
    v
}

/// Gradient of [`overlap_volume`] with respect to both extents.
/// On the disjoint side of the clamp the subgradient is zero, so far
/// obstacles exert no force; the clearance hyperparameter exists to keep
/// gradients alive near contact instead.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtentsGrad {
    pub d_lo: Vector3<f64>,
    pub d_hi: Vector3<f64>,
}

pub fn overlap_volume_grad(a: &Extents, b: &Extents) -> (f64, ExtentsGrad, ExtentsGrad) {
    let mut o = [0.0f64; 3];
    for axis in 0..3 {
        o[axis] = a.hi[axis].min(b.hi[axis]) - a.lo[axis].max(b.lo[axis]);
        if o[axis] <= 0.0 {
            return (0.0, ExtentsGrad::default(), ExtentsGrad::default());
        }
    }
    let volume = o[0] * o[1] * o[2];
    let mut ga = ExtentsGrad::default();
    let mut gb = ExtentsGrad::default();
    for axis in 0..3 {
        let others = volume / o[axis];
        // d overlap / d hi = +1 through the active min branch (tie -> a).
        if a.hi[axis] <= b.hi[axis] {
            ga.d_hi[axis] = others;
        } else {
            gb.d_hi[axis] = others;
        }
        // d overlap / d lo = -1 through the active max branch (tie -> a).
        if a.lo[axis] >= b.lo[axis] {
            ga.d_lo[axis] = -others;
        } else {
            gb.d_lo[axis] = -others;
        }
    }
    (volume, ga, gb)
}

/// The enclosing box of a link at two consecutive waypoints.
pub fn swept_extents(a: &Extents, b: &Extents) -> Extents {
    Extents { lo: a.lo.inf(&b.lo), hi: a.hi.sup(&b.hi) }
}

/// Per-axis branch choices of [`swept_extents`]: `true` where the first
/// argument is active (ties -> first).
#[derive(Debug, Clone, Copy)]
pub struct SweptArgs {
    pub lo_from_a: [bool; 3],
    pub hi_from_a: [bool; 3],
}

pub fn swept_extents_with_args(a: &Extents, b: &Extents) -> (Extents, SweptArgs) {
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    let mut args = SweptArgs { lo_from_a: [false; 3], hi_from_a: [false; 3] };
    for axis in 0..3 {
        args.lo_from_a[axis] = a.lo[axis] <= b.lo[axis];
        lo[axis] = if args.lo_from_a[axis] { a.lo[axis] } else { b.lo[axis] };
        args.hi_from_a[axis] = a.hi[axis] >= b.hi[axis];
        hi[axis] = if args.hi_from_a[axis] { a.hi[axis] } else { b.hi[axis] };
    }
    (Extents { lo, hi }, args)
}

/// Obstacle expansion policies. The clearance keeps gradients alive near
/// contact; expansion widens thin axes so gradients steer the arm around
/// a slab's edge instead of into its face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPolicy {
    /// No widening.
    None,
    /// Constant relative widening: axes below `EXPANSION_RATIO * max` are
    /// raised to that floor.
    Type1,
    /// Type I scaled by `t / T`: full early in denoising, fading to zero.
    Type2,
    /// The thinnest axis widened by the absolute `EXPANSION_DELTA`.
    Type3,
}

/// Grow a cuboid by `clearance` on every axis, then apply the expansion
/// policy at denoising step `t` of `total`. The pose is unchanged.
pub fn inflate(
    c: &Cuboid,
    clearance: f64,
    expansion: ExpansionPolicy,
    t: usize,
    total: usize,
) -> Cuboid {
    debug_assert!(clearance >= 0.0);
    let mut half = c.half_extents + Vector3::repeat(clearance);
    match expansion {
        ExpansionPolicy::None => {}
        ExpansionPolicy::Type1 => {
            let floor = EXPANSION_RATIO * half.max();
            half = half.map(|h| h.max(floor));
        }
        ExpansionPolicy::Type2 => {
            let scale = t as f64 / total as f64;
            let floor = EXPANSION_RATIO * half.max();
            half = half.map(|h| h + scale * (floor - h).max(0.0));
        }
        ExpansionPolicy::Type3 => {
            let thinnest = half.imin();
            half[thinnest] += EXPANSION_DELTA;
        }
    }
    Cuboid { pose: c.pose, half_extents: half }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_cube_at_origin() -> Cuboid {
        Cuboid::new(Pose::identity(), Vector3::repeat(0.5))
    }

    fn random_extents(rng: &mut impl Rng) -> Extents {
        let c = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let h = Vector3::new(rng.gen_range(0.05..0.8), rng.gen_range(0.05..0.8), rng.gen_range(0.05..0.8));
        Extents { lo: c - h, hi: c + h }
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        nalgebra::Rotation3::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.0..3.0),
        )
        .into_inner()
    }

    #[test]
    fn vertices_of_unit_cube_at_identity() {
        let vs = vertices(&unit_cube_at_origin());
        for (v, signs) in vs.iter().zip(VERTEX_SIGNS.iter()) {
            assert_eq!(*v, Vector3::new(0.5 * signs[0], 0.5 * signs[1], 0.5 * signs[2]));
        }
    }

    #[test]
    fn vertices_shift_under_pure_translation() {
        let shifted = Cuboid::new(
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            Vector3::repeat(0.5),
        );
        let base = vertices(&unit_cube_at_origin());
        let moved = vertices(&shifted);
        for (a, b) in base.iter().zip(moved.iter()) {
            assert_eq!(*b, a + Vector3::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn vertices_under_rotation_match_hand_trig() {
        // 90 degrees about z maps (x, y, z) -> (-y, x, z).
        let c = Cuboid::new(
            Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2),
            Vector3::new(1.0, 0.5, 0.25),
        );
        let vs = vertices(&c);
        for (v, signs) in vs.iter().zip(VERTEX_SIGNS.iter()) {
            let expected = Vector3::new(-signs[1] * 0.5, signs[0] * 1.0, signs[2] * 0.25);
            assert_relative_eq!(*v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn extents_of_axis_aligned_unit_cube() {
        let e = extents(&vertices(&unit_cube_at_origin()));
        assert_eq!(e.lo, Vector3::repeat(-0.5));
        assert_eq!(e.hi, Vector3::repeat(0.5));
    }

    #[test]
    fn extents_inflate_under_45_degree_rotation() {
        let c = Cuboid::new(
            Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_4),
            Vector3::repeat(0.5),
        );
        let e = extents(&vertices(&c));
        let half_diag = std::f64::consts::SQRT_2 / 2.0;
        assert_relative_eq!(e.lo.x, -half_diag, epsilon = 1e-12);
        assert_relative_eq!(e.hi.x, half_diag, epsilon = 1e-12);
        assert_relative_eq!(e.lo.z, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn extents_of_coincident_points_collapse() {
        let p = Vector3::new(0.3, -0.2, 0.9);
        let vs = [p; 8];
        let e = extents(&vs);
        assert_eq!(e.lo, p);
        assert_eq!(e.hi, p);
    }

    #[test]
    fn overlap_of_identical_boxes_is_their_volume() {
        let a = Extents { lo: Vector3::zeros(), hi: Vector3::repeat(1.0) };
        assert_eq!(overlap_volume(&a, &a), 1.0);
    }

    #[test]
    fn overlap_of_disjoint_boxes_is_zero() {
        let a = Extents { lo: Vector3::zeros(), hi: Vector3::repeat(1.0) };
        let b = Extents { lo: Vector3::new(2.0, 0.0, 0.0), hi: Vector3::new(3.0, 1.0, 1.0) };
        assert_eq!(overlap_volume(&a, &b), 0.0);
    }

    #[test]
    fn overlap_of_partial_boxes_matches_hand_value() {
        let a = Extents { lo: Vector3::zeros(), hi: Vector3::repeat(1.0) };
        let b = Extents {
            lo: Vector3::new(0.5, -0.2, 0.3),
            hi: Vector3::new(1.5, 0.8, 0.9),
        };
        assert_relative_eq!(overlap_volume(&a, &b), 0.5 * 0.8 * 0.6, epsilon = 1e-12);
    }

    #[test]
    fn overlap_is_symmetric() {
        let mut rng = stream(11, "geom_sym", 0, 0);
        for _ in 0..200 {
            let a = random_extents(&mut rng);
            let b = random_extents(&mut rng);
            assert_eq!(overlap_volume(&a, &b), overlap_volume(&b, &a));
        }
    }

    #[test]
    fn self_overlap_equals_aabb_volume() {
        let mut rng = stream(12, "geom_self", 0, 0);
        for _ in 0..100 {
            let c = Cuboid::new(
                Pose::new(random_rotation(&mut rng), Vector3::new(0.2, -0.4, 0.1)),
                Vector3::new(
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(0.05..0.5),
                ),
            );
            let e = extents(&vertices(&c));
            assert_relative_eq!(overlap_volume(&e, &e), e.volume(), epsilon = 1e-12);
        }
    }

    #[test]
    fn overlap_nonnegative_and_zero_iff_axis_disjoint() {
        let mut rng = stream(13, "geom_nonneg", 0, 0);
        for _ in 0..300 {
            let a = random_extents(&mut rng);
            let b = random_extents(&mut rng);
            let v = overlap_volume(&a, &b);
            assert!(v >= 0.0);
            let disjoint = (0..3).any(|ax| a.hi[ax].min(b.hi[ax]) <= a.lo[ax].max(b.lo[ax]));
            assert_eq!(v == 0.0, disjoint);
        }
    }

    #[test]
    fn swept_extents_of_equal_boxes_is_identity() {
        let a = Extents { lo: Vector3::new(-0.1, 0.0, 0.2), hi: Vector3::new(0.4, 0.5, 0.6) };
        assert_eq!(swept_extents(&a, &a), a);
    }

    #[test]
    fn swept_extents_encloses_both() {
        let a = Extents { lo: Vector3::zeros(), hi: Vector3::repeat(1.0) };
        let b = Extents { lo: Vector3::new(1.0, 0.0, 0.0), hi: Vector3::new(2.0, 1.0, 1.0) };
        let s = swept_extents(&a, &b);
        assert_eq!(s.lo, Vector3::zeros());
        assert_eq!(s.hi, Vector3::new(2.0, 1.0, 1.0));
    }

    #[test]
    fn swept_extents_of_nested_boxes_is_outer() {
        let inner = Extents { lo: Vector3::repeat(0.2), hi: Vector3::repeat(0.4) };
        let outer = Extents { lo: Vector3::zeros(), hi: Vector3::repeat(1.0) };
        assert_eq!(swept_extents(&inner, &outer), outer);
    }

    #[test]
    fn inflate_identity_when_zero() {
        let c = unit_cube_at_origin();
        let out = inflate(&c, 0.0, ExpansionPolicy::None, 1, 64);
        assert_eq!(out.half_extents, c.half_extents);
        assert_eq!(out.pose, c.pose);
    }

    #[test]
    fn inflate_adds_clearance_uniformly() {
        let c = unit_cube_at_origin();
        let out = inflate(&c, 0.1, ExpansionPolicy::None, 1, 64);
        assert_relative_eq!(out.half_extents, Vector3::repeat(0.6), epsilon = 1e-15);
    }

    #[test]
    fn inflate_type3_widens_thinnest_axis() {
        let c = Cuboid::new(Pose::identity(), Vector3::new(1.0, 0.02, 0.5));
        let out = inflate(&c, 0.0, ExpansionPolicy::Type3, 1, 64);
        assert_relative_eq!(out.half_extents, Vector3::new(1.0, 0.12, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn inflate_type1_raises_axes_to_relative_floor() {
        let c = Cuboid::new(Pose::identity(), Vector3::new(1.0, 0.02, 0.5));
        let out = inflate(&c, 0.0, ExpansionPolicy::Type1, 1, 64);
        assert_relative_eq!(out.half_extents, Vector3::new(1.0, 0.25, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn inflate_type2_scales_with_timestep() {
        let c = Cuboid::new(Pose::identity(), Vector3::new(1.0, 0.02, 0.5));
        let full = inflate(&c, 0.0, ExpansionPolicy::Type2, 64, 64);
        assert_relative_eq!(full.half_extents.y, 0.25, epsilon = 1e-15);
        let half = inflate(&c, 0.0, ExpansionPolicy::Type2, 32, 64);
        assert_relative_eq!(half.half_extents.y, 0.02 + 0.5 * 0.23, epsilon = 1e-15);
        let late = inflate(&c, 0.0, ExpansionPolicy::Type2, 1, 64);
        assert!(late.half_extents.y < 0.03);
    }

    #[test]
    fn clearance_monotonicity() {
        let mut rng = stream(14, "geom_mono", 0, 0);
        for _ in 0..100 {
            let obstacle = Cuboid::new(
                Pose::new(random_rotation(&mut rng), Vector3::new(0.3, 0.1, 0.0)),
                Vector3::new(0.2, 0.2, 0.2),
            );
            let probe = random_extents(&mut rng);
            let c1 = rng.gen_range(0.0..0.2);
            let c2 = c1 + rng.gen_range(0.0..0.2);
            let e1 = extents(&vertices(&inflate(&obstacle, c1, ExpansionPolicy::None, 1, 64)));
            let e2 = extents(&vertices(&inflate(&obstacle, c2, ExpansionPolicy::None, 1, 64)));
            assert!(overlap_volume(&probe, &e2) >= overlap_volume(&probe, &e1));
        }
    }

    #[test]
    fn rotation_never_shrinks_aabb_volume() {
        let mut rng = stream(15, "geom_rot", 0, 0);
        for _ in 0..100 {
            let half = Vector3::new(
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.6),
            );
            let aligned = Cuboid::new(Pose::identity(), half);
            let rotated = Cuboid::new(Pose::new(random_rotation(&mut rng), Vector3::zeros()), half);
            let va = extents(&vertices(&aligned)).volume();
            let vr = extents(&vertices(&rotated)).volume();
            assert!(vr >= va - 1e-12);
        }
    }

    /// Central finite differences of `overlap_volume` with respect to all
    /// 16 vertex coordinates (8 per box), compared to the routed analytic
    /// subgradient. Boundary configurations are excluded by requiring a
    /// comfortable per-axis overlap.
    #[test]
    fn overlap_gradient_matches_finite_differences() {
        let mut rng = stream(16, "geom_fd", 0, 0);
        let step = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let ca = Cuboid::new(
                Pose::new(random_rotation(&mut rng), Vector3::zeros()),
                Vector3::new(
                    rng.gen_range(0.2..0.5),
                    rng.gen_range(0.2..0.5),
                    rng.gen_range(0.2..0.5),
                ),
            );
            let offset = Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            );
            let cb = Cuboid::new(
                Pose::new(random_rotation(&mut rng), offset),
                Vector3::new(
                    rng.gen_range(0.2..0.5),
                    rng.gen_range(0.2..0.5),
                    rng.gen_range(0.2..0.5),
                ),
            );
            let va = vertices(&ca);
            let vb = vertices(&cb);
            let ea = extents_with_args(&va);
            let eb = extents_with_args(&vb);
            let overlap_ok = (0..3).all(|ax| {
                ea.extents.hi[ax].min(eb.extents.hi[ax])
                    - ea.extents.lo[ax].max(eb.extents.lo[ax])
                    > 1e-3
            });
            if !overlap_ok {
                continue;
            }
            checked += 1;

            let (_, ga, gb) = overlap_volume_grad(&ea.extents, &eb.extents);
            let eval = |va: &[Vector3<f64>; 8], vb: &[Vector3<f64>; 8]| {
                overlap_volume(&extents(va), &extents(vb))
            };
            for (verts, other, ext, grad, first) in [
                (&va, &vb, &ea, &ga, true),
                (&vb, &va, &eb, &gb, false),
            ] {
                for vi in 0..8 {
                    for axis in 0..3 {
                        let mut plus = *verts;
                        let mut minus = *verts;
                        plus[vi][axis] += step;
                        minus[vi][axis] -= step;
                        let fd = if first {
                            (eval(&plus, other) - eval(&minus, other)) / (2.0 * step)
                        } else {
                            (eval(other, &plus) - eval(other, &minus)) / (2.0 * step)
                        };
                        // Only the extreme vertex of each axis carries gradient.
                        let mut analytic = 0.0;
                        if ext.arg_lo[axis] == vi {
                            analytic += grad.d_lo[axis];
                        }
                        if ext.arg_hi[axis] == vi {
                            analytic += grad.d_hi[axis];
                        }
                        let denom = fd.abs().max(analytic.abs()).max(1e-6);
                        assert!(
                            (fd - analytic).abs() / denom <= 1e-4,
                            "vertex {vi} axis {axis}: fd={fd} analytic={analytic}"
                        );
                    }
                }
            }
        }
    }
}
