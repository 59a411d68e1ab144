//! Kinematic chains of revolute joints with one cuboid per link.
//!
//! A chain is a serial sequence of revolute joints; each link is a cuboid
//! bound to one joint frame, and an optional handheld object rides the last
//! link as if it were another link with a fixed joint. Forward kinematics
//! and its exact Jacobian are the differentiable substrate the collision
//! costs are built on.

use nalgebra::{DMatrix, DVector, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{extents, overlap_volume, vertices, Cuboid, Pose, ROTATION_TOL};
use crate::{Error, Result};

/// One revolute joint: rotation about `axis` in the frame reached by
/// composing the parent joint frame with `origin`.
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub axis: Unit<Vector3<f64>>,
    pub origin: Pose,
    /// Lower/upper joint limits in radians, `lo < hi`.
    pub limits: [f64; 2],
}

/// One cuboid link bound to the frame of joint `joint`.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub joint: usize,
    pub offset: Pose,
    pub half_extents: Vector3<f64>,
}

/// A rigidly attached object, offset from the last link's frame.
#[derive(Debug, Clone)]
pub struct Attachment {
    pub offset: Pose,
    pub half_extents: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkSpec>,
    pub attached: Option<Attachment>,
}

/// Joint angles in radians, one per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState(pub DVector<f64>);

impl JointState {
    pub fn from_vec(q: Vec<f64>) -> Self {
        JointState(DVector::from_vec(q))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A joint-space trajectory: `h` waypoints of `m` joint angles.
/// Row 0 is the start and row `h - 1` the goal once conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: DMatrix<f64>,
}

impl Trajectory {
    /// Panics unless `states` has at least two rows.
    pub fn new(states: DMatrix<f64>) -> Self {
        assert!(states.nrows() >= 2, "a trajectory needs at least two waypoints");
        Trajectory { states }
    }

    pub fn zeros(h: usize, m: usize) -> Self {
        Self::new(DMatrix::zeros(h, m))
    }

    pub fn horizon(&self) -> usize {
        self.states.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.states
    }

    pub fn waypoint(&self, k: usize) -> JointState {
        JointState(self.states.row(k).transpose())
    }

    pub fn set_waypoint(&mut self, k: usize, s: &JointState) {
        self.states.row_mut(k).tr_copy_from(&s.0);
    }

    /// Straight-line interpolation between two states.
    pub fn linear(start: &JointState, goal: &JointState, h: usize) -> Self {
        assert_eq!(start.dim(), goal.dim());
        let m = start.dim();
        let states = DMatrix::from_fn(h, m, |k, j| {
            let u = k as f64 / (h - 1) as f64;
            start.0[j] + u * (goal.0[j] - start.0[j])
        });
        Self::new(states)
    }
}

impl ChainSpec {
    /// Number of joints `m`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of cuboids emitted by [`fk`]: links plus the attachment.
    pub fn body_count(&self) -> usize {
        self.links.len() + usize::from(self.attached.is_some())
    }

    /// The default desk-scale arm: three revolute joints (z, y, y axes),
    /// links of half extents (0.35, 0.05, 0.05) extending along +x, and
    /// limits of +/- pi on every joint. Small enough to brute-force,
    /// articulate enough to retract around a shelf.
    pub fn default_arm() -> Self {
        let link_half = Vector3::new(0.35, 0.05, 0.05);
        let link_offset = Pose::from_translation(Vector3::new(0.35, 0.0, 0.0));
        let step = Pose::from_translation(Vector3::new(0.7, 0.0, 0.0));
        ChainSpec {
            joints: vec![
                JointSpec {
                    axis: Unit::new_normalize(Vector3::z()),
                    origin: Pose::identity(),
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                },
                JointSpec {
                    axis: Unit::new_normalize(Vector3::y()),
                    origin: step,
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                },
                JointSpec {
                    axis: Unit::new_normalize(Vector3::y()),
                    origin: step,
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                },
            ],
            links: (0..3)
                .map(|j| LinkSpec { joint: j, offset: link_offset, half_extents: link_half })
                .collect(),
            attached: None,
        }
    }

    /// A copy of this chain with `object` attached to the last link.
    /// Replaces (with a warning) any object already attached.
    pub fn attach_object(&self, half_extents: Vector3<f64>, offset: Pose) -> ChainSpec {
        if self.attached.is_some() {
            log::warn!("replacing an already attached object");
        }
        let mut out = self.clone();
        out.attached = Some(Attachment { offset, half_extents });
        out
    }

    /// World frames of every joint at configuration `q`, plus the
    /// pre-rotation axis anchor of each joint (world axis direction and
    /// the point it passes through) used by the Jacobian.
    fn joint_frames(&self, q: &JointState) -> (Vec<Pose>, Vec<(Vector3<f64>, Vector3<f64>)>) {
        assert_eq!(q.dim(), self.dof(), "joint state dimension mismatch");
        let mut frames = Vec::with_capacity(self.dof());
        let mut anchors = Vec::with_capacity(self.dof());
        let mut frame = Pose::identity();
        for (j, joint) in self.joints.iter().enumerate() {
            let pre = frame.compose(&joint.origin);
            let world_axis = pre.rotation * joint.axis.into_inner();
            anchors.push((world_axis, pre.translation));
            frame = pre.compose(&Pose::from_axis_angle(&joint.axis, q.0[j]));
            frames.push(frame);
        }
        (frames, anchors)
    }

    /// World pose of every body (links in order, then the attachment).
    fn body_poses(&self, q: &JointState) -> (Vec<Pose>, Vec<usize>) {
        let (frames, _) = self.joint_frames(q);
        self.body_poses_from_frames(&frames)
    }

    fn body_poses_from_frames(&self, frames: &[Pose]) -> (Vec<Pose>, Vec<usize>) {
        let mut poses = Vec::with_capacity(self.body_count());
        let mut bound_joint = Vec::with_capacity(self.body_count());
        for link in &self.links {
            poses.push(frames[link.joint].compose(&link.offset));
            bound_joint.push(link.joint);
        }
        if let Some(att) = &self.attached {
            let last = self.links.last().expect("chain has no links");
            let last_pose = frames[last.joint].compose(&last.offset);
            poses.push(last_pose.compose(&att.offset));
            bound_joint.push(last.joint);
        }
        (poses, bound_joint)
    }

    fn body_half_extents(&self, body: usize) -> Vector3<f64> {
        if body < self.links.len() {
            self.links[body].half_extents
        } else {
            self.attached.as_ref().expect("no attachment").half_extents
        }
    }
}

/// Forward kinematics: the world-frame cuboid of every link (and the
/// attached object, last) at configuration `q`.
pub fn fk(chain: &ChainSpec, q: &JointState) -> Vec<Cuboid> {
    let (poses, _) = chain.body_poses(q);
    poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| Cuboid::new(pose, chain.body_half_extents(i)))
        .collect()
}

/// FK plus the exact Jacobian of every body vertex. `vertex_jac[body][j][v]`
/// is the derivative of vertex `v` of body `body` with respect to joint `j`.
/// For a revolute joint the derivative of any downstream point `p` is
/// `axis x (p - anchor)`; upstream joints contribute zero.
pub struct FkGrad {
    pub cuboids: Vec<Cuboid>,
    pub vertex_jac: Vec<Vec<[Vector3<f64>; 8]>>,
}

pub fn fk_grad(chain: &ChainSpec, q: &JointState) -> FkGrad {
    let (frames, anchors) = chain.joint_frames(q);
    let (poses, bound_joint) = chain.body_poses_from_frames(&frames);
    let m = chain.dof();
    let mut cuboids = Vec::with_capacity(poses.len());
    let mut vertex_jac = Vec::with_capacity(poses.len());
    for (body, pose) in poses.into_iter().enumerate() {
        let cuboid = Cuboid::new(pose, chain.body_half_extents(body));
        let verts = vertices(&cuboid);
        let mut jac = vec![[Vector3::zeros(); 8]; m];
        for (j, jac_j) in jac.iter_mut().enumerate().take(bound_joint[body] + 1) {
            let (axis, anchor) = anchors[j];
            for (v, out) in verts.iter().zip(jac_j.iter_mut()) {
                *out = axis.cross(&(v - anchor));
            }
        }
        cuboids.push(cuboid);
        vertex_jac.push(jac);
    }
    FkGrad { cuboids, vertex_jac }
}

/// Componentwise clamp of a joint state to the chain's limits.
pub fn clip_joints(q: &JointState, chain: &ChainSpec) -> JointState {
    let clipped = DVector::from_fn(q.dim(), |j, _| {
        q.0[j].clamp(chain.joints[j].limits[0], chain.joints[j].limits[1])
    });
    JointState(clipped)
}

/// Clamp every waypoint of a trajectory to the joint limits.
pub fn clip_trajectory(tau: &Trajectory, chain: &ChainSpec) -> Trajectory {
    let mut out = tau.clone();
    for j in 0..tau.dim() {
        let [lo, hi] = chain.joints[j].limits;
        for k in 0..tau.horizon() {
            out.states_mut()[(k, j)] = tau.states()[(k, j)].clamp(lo, hi);
        }
    }
    out
}

/// True iff any non-adjacent pair of bodies overlaps at `q`. Consecutive
/// bodies share a joint neighbourhood and are exempt, otherwise they would
/// flag a collision in every configuration.
pub fn self_collision(chain: &ChainSpec, q: &JointState) -> bool {
    let cuboids = fk(chain, q);
    let exts: Vec<_> = cuboids.iter().map(|c| extents(&vertices(c))).collect();
    for i in 0..exts.len() {
        for j in (i + 2)..exts.len() {
            if overlap_volume(&exts[i], &exts[j]) > 0.0 {
                return true;
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Chain file format (JSON, unknown fields rejected).

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    #[serde(default = "identity_rows")]
    rotation: [[f64; 3]; 3],
    #[serde(default)]
    translation: [f64; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    axis: [f64; 3],
    #[serde(default = "PoseFile::identity")]
    origin: PoseFile,
    limits: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    joint: usize,
    #[serde(default = "PoseFile::identity")]
    offset: PoseFile,
    half_extents: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachmentFile {
    #[serde(default = "PoseFile::identity")]
    offset: PoseFile,
    half_extents: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    format: String,
    joints: Vec<JointFile>,
    links: Vec<LinkFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attached: Option<AttachmentFile>,
}

pub const CHAIN_FORMAT: &str = "diffplan-chain-v1";

impl PoseFile {
    fn identity() -> Self {
        PoseFile { rotation: identity_rows(), translation: [0.0; 3] }
    }

    fn to_pose(&self, path: &str) -> Result<Pose> {
        let r = nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let pose = Pose::new(r, Vector3::from_column_slice(&self.translation));
        if !pose.rotation.iter().chain(pose.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid(path, "non-finite pose entries"));
        }
        if pose.rotation_defect() > ROTATION_TOL {
            return Err(Error::invalid(
                format!("{path}.rotation"),
                format!("not orthonormal with det +1 (defect {:.3e})", pose.rotation_defect()),
            ));
        }
        Ok(pose)
    }

    fn from_pose(pose: &Pose) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = pose.rotation[(i, j)];
            }
        }
        PoseFile { rotation, translation: [pose.translation.x, pose.translation.y, pose.translation.z] }
    }
}

fn half_extents_from(path: &str, raw: [f64; 3]) -> Result<Vector3<f64>> {
    if raw.iter().any(|h| !h.is_finite() || *h <= 0.0) {
        return Err(Error::invalid(
            format!("{path}.half_extents"),
            format!("half extents must be strictly positive, got {raw:?}"),
        ));
    }
    Ok(Vector3::from_column_slice(&raw))
}

/// Parse and validate a chain document.
pub fn chain_from_json(text: &str) -> Result<ChainSpec> {
    let file: ChainFile = serde_json::from_str(text)?;
    if file.format != CHAIN_FORMAT {
        return Err(Error::invalid(
            "format",
            format!("expected {CHAIN_FORMAT:?}, got {:?}", file.format),
        ));
    }
    if file.joints.is_empty() {
        return Err(Error::invalid("joints", "a chain needs at least one joint"));
    }
    if file.links.len() < file.joints.len() {
        return Err(Error::invalid(
            "links",
            format!("{} links for {} joints; need at least one per joint", file.links.len(), file.joints.len()),
        ));
    }
    let mut joints = Vec::with_capacity(file.joints.len());
    for (j, joint) in file.joints.iter().enumerate() {
        let path = format!("joints[{j}]");
        let axis = Vector3::from_column_slice(&joint.axis);
        if (axis.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                format!("{path}.axis"),
                format!("axis must be unit length, norm is {}", axis.norm()),
            ));
        }
        if !(joint.limits[0] < joint.limits[1]) {
            return Err(Error::invalid(
                format!("{path}.limits"),
                "lower limit must be strictly below upper limit",
            ));
        }
        joints.push(JointSpec {
            axis: Unit::new_normalize(axis),
            origin: joint.origin.to_pose(&format!("{path}.origin"))?,
            limits: joint.limits,
        });
    }
    let mut links = Vec::with_capacity(file.links.len());
    for (i, link) in file.links.iter().enumerate() {
        let path = format!("links[{i}]");
        if link.joint >= joints.len() {
            return Err(Error::invalid(
                format!("{path}.joint"),
                format!("joint index {} out of range ({} joints)", link.joint, joints.len()),
            ));
        }
        links.push(LinkSpec {
            joint: link.joint,
            offset: link.offset.to_pose(&format!("{path}.offset"))?,
            half_extents: half_extents_from(&path, link.half_extents)?,
        });
    }
    let attached = match &file.attached {
        None => None,
        Some(att) => Some(Attachment {
            offset: att.offset.to_pose("attached.offset")?,
            half_extents: half_extents_from("attached", att.half_extents)?,
        }),
    };
    Ok(ChainSpec { joints, links, attached })
}

pub fn chain_to_json(chain: &ChainSpec) -> String {
    let file = ChainFile {
        format: CHAIN_FORMAT.to_string(),
        joints: chain
            .joints
            .iter()
            .map(|j| JointFile {
                axis: [j.axis.x, j.axis.y, j.axis.z],
                origin: PoseFile::from_pose(&j.origin),
                limits: j.limits,
            })
            .collect(),
        links: chain
            .links
            .iter()
            .map(|l| LinkFile {
                joint: l.joint,
                offset: PoseFile::from_pose(&l.offset),
                half_extents: [l.half_extents.x, l.half_extents.y, l.half_extents.z],
            })
            .collect(),
        attached: chain.attached.as_ref().map(|a| AttachmentFile {
            offset: PoseFile::from_pose(&a.offset),
            half_extents: [a.half_extents.x, a.half_extents.y, a.half_extents.z],
        }),
    };
    serde_json::to_string_pretty(&file).expect("chain serialization cannot fail")
}

pub fn read_chain(path: &std::path::Path) -> Result<ChainSpec> {
    chain_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_chain(path: &std::path::Path, chain: &ChainSpec) -> Result<()> {
    std::fs::write(path, chain_to_json(chain))?;
    Ok(())
}

/// A parsed attachment document (`{"half_extents": [...], "offset": {...}}`),
/// used by `plan --attach`.
pub fn attachment_from_json(text: &str) -> Result<(Vector3<f64>, Pose)> {
    let file: AttachmentFile = serde_json::from_str(text)?;
    Ok((
        half_extents_from("attach", file.half_extents)?,
        file.offset.to_pose("attach.offset")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Two unit-length links along x, both joints about z, link frames at
    /// the distal ends.
    fn planar_two_link() -> ChainSpec {
        let tip = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        ChainSpec {
            joints: vec![
                JointSpec {
                    axis: Unit::new_normalize(Vector3::z()),
                    origin: Pose::identity(),
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                },
                JointSpec {
                    axis: Unit::new_normalize(Vector3::z()),
                    origin: tip,
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                },
            ],
            links: vec![
                LinkSpec { joint: 0, offset: tip, half_extents: Vector3::new(0.5, 0.05, 0.05) },
                LinkSpec { joint: 1, offset: tip, half_extents: Vector3::new(0.5, 0.05, 0.05) },
            ],
            attached: None,
        }
    }

    fn random_chain(rng: &mut impl Rng) -> ChainSpec {
        let m = rng.gen_range(1..=5);
        let joints = (0..m)
            .map(|_| {
                let axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
                JointSpec {
                    axis: Unit::new_normalize(axis),
                    origin: Pose::from_rpy(
                        &Vector3::new(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        ),
                        Vector3::new(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ),
                    ),
                    limits: [-std::f64::consts::PI, std::f64::consts::PI],
                }
            })
            .collect::<Vec<_>>();
        let links = (0..m)
            .map(|j| LinkSpec {
                joint: j,
                offset: Pose::from_rpy(
                    &Vector3::new(rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0)),
                    Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 0.1),
                ),
                half_extents: Vector3::new(
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(0.05..0.4),
                ),
            })
            .collect();
        ChainSpec { joints, links, attached: None }
    }

    fn random_state(chain: &ChainSpec, rng: &mut impl Rng) -> JointState {
        JointState(DVector::from_fn(chain.dof(), |j, _| {
            rng.gen_range(chain.joints[j].limits[0]..chain.joints[j].limits[1])
        }))
    }

    #[test]
    fn fk_zero_configuration_reaches_along_x() {
        let chain = planar_two_link();
        let cuboids = fk(&chain, &JointState::from_vec(vec![0.0, 0.0]));
        assert_relative_eq!(
            cuboids[1].pose.translation,
            Vector3::new(2.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fk_quarter_turn_reaches_along_y() {
        let chain = planar_two_link();
        let cuboids = fk(&chain, &JointState::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]));
        assert_relative_eq!(
            cuboids[1].pose.translation,
            Vector3::new(0.0, 2.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn attached_object_rides_the_last_link() {
        let chain = planar_two_link();
        let offset = Pose::from_translation(Vector3::new(0.6, 0.0, 0.1));
        let with_obj = chain.attach_object(Vector3::repeat(0.05), offset);
        let mut rng = stream(3, "chain_attach", 0, 0);
        for _ in 0..10 {
            let q = random_state(&with_obj, &mut rng);
            let cuboids = fk(&with_obj, &q);
            let last_link = cuboids[cuboids.len() - 2].pose;
            let expected = last_link.compose(&offset);
            let got = cuboids.last().unwrap().pose;
            assert_relative_eq!(got.translation, expected.translation, epsilon = 1e-12);
            assert_relative_eq!(got.rotation, expected.rotation, epsilon = 1e-12);
        }
    }

    #[test]
    fn attach_accepts_degenerate_thin_objects() {
        let chain = planar_two_link().attach_object(Vector3::repeat(1e-4), Pose::identity());
        let cuboids = fk(&chain, &JointState::from_vec(vec![0.0, 0.0]));
        assert_eq!(cuboids.len(), 3);
        assert!(cuboids[2].volume() < 1e-10);
    }

    #[test]
    fn attach_preserves_existing_link_poses() {
        let chain = planar_two_link();
        let with_obj = chain.attach_object(
            Vector3::repeat(0.05),
            Pose::from_translation(Vector3::new(0.6, 0.0, 0.0)),
        );
        let mut rng = stream(4, "chain_attach_inv", 0, 0);
        for _ in 0..20 {
            let q = random_state(&chain, &mut rng);
            let plain = fk(&chain, &q);
            let augmented = fk(&with_obj, &q);
            for (a, b) in plain.iter().zip(augmented.iter()) {
                assert_eq!(a.pose, b.pose);
            }
        }
    }

    #[test]
    fn fk_grad_single_joint_matches_hand_derivative() {
        // One z joint, a vertex at radius r on the x axis: d(x, y)/dq = (0, r).
        let chain = ChainSpec {
            joints: vec![JointSpec {
                axis: Unit::new_normalize(Vector3::z()),
                origin: Pose::identity(),
                limits: [-3.0, 3.0],
            }],
            links: vec![LinkSpec {
                joint: 0,
                offset: Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)),
                half_extents: Vector3::new(0.5, 0.1, 0.1),
            }],
            attached: None,
        };
        let g = fk_grad(&chain, &JointState::from_vec(vec![0.0]));
        let verts = vertices(&g.cuboids[0]);
        for (v, jac) in verts.iter().zip(g.vertex_jac[0][0].iter()) {
            assert_relative_eq!(jac.x, -v.y, epsilon = 1e-12);
            assert_relative_eq!(jac.y, v.x, epsilon = 1e-12);
            assert_eq!(jac.z, 0.0);
        }
    }

    #[test]
    fn fk_grad_z_is_invariant_under_z_rotation() {
        let chain = planar_two_link();
        let mut rng = stream(5, "chain_zgrad", 0, 0);
        for _ in 0..10 {
            let q = random_state(&chain, &mut rng);
            let g = fk_grad(&chain, &q);
            for body in &g.vertex_jac {
                for joint in body {
                    for d in joint {
                        assert_eq!(d.z, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fk_grad_matches_finite_differences() {
        let mut rng = stream(6, "chain_fd", 0, 0);
        let step = 1e-6;
        for sample in 0..100 {
            let chain = random_chain(&mut rng);
            let q = random_state(&chain, &mut rng);
            let g = fk_grad(&chain, &q);
            for j in 0..chain.dof() {
                let mut plus = q.clone();
                let mut minus = q.clone();
                plus.0[j] += step;
                minus.0[j] -= step;
                let vp: Vec<_> = fk(&chain, &plus).iter().map(vertices).collect();
                let vm: Vec<_> = fk(&chain, &minus).iter().map(vertices).collect();
                let mut num = 0.0;
                let mut den = 0.0;
                for body in 0..vp.len() {
                    for v in 0..8 {
                        let fd = (vp[body][v] - vm[body][v]) / (2.0 * step);
                        let an = g.vertex_jac[body][j][v];
                        num += (fd - an).norm_squared();
                        den += fd.norm_squared();
                    }
                }
                let rel = num.sqrt() / den.sqrt().max(1e-9);
                assert!(rel <= 1e-5, "sample {sample} joint {j}: rel err {rel}");
            }
        }
    }

    #[test]
    fn fk_equals_left_fold_of_per_joint_transforms() {
        let mut rng = stream(7, "chain_fold", 0, 0);
        for _ in 0..20 {
            let chain = random_chain(&mut rng);
            let q = random_state(&chain, &mut rng);
            // Manual fold of origin * rotation per joint.
            let mut frame = Pose::identity();
            let mut frames = Vec::new();
            for (j, joint) in chain.joints.iter().enumerate() {
                frame = frame
                    .compose(&joint.origin)
                    .compose(&Pose::from_axis_angle(&joint.axis, q.0[j]));
                frames.push(frame);
            }
            let cuboids = fk(&chain, &q);
            for (link, cuboid) in chain.links.iter().zip(cuboids.iter()) {
                let expected = frames[link.joint].compose(&link.offset);
                assert_relative_eq!(cuboid.pose.translation, expected.translation, epsilon = 1e-12);
                assert_relative_eq!(cuboid.pose.rotation, expected.rotation, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clip_clamps_out_of_range_values() {
        let chain = ChainSpec {
            joints: vec![JointSpec {
                axis: Unit::new_normalize(Vector3::z()),
                origin: Pose::identity(),
                limits: [-3.0, 3.0],
            }],
            links: vec![LinkSpec {
                joint: 0,
                offset: Pose::identity(),
                half_extents: Vector3::repeat(0.1),
            }],
            attached: None,
        };
        let clipped = clip_joints(&JointState::from_vec(vec![3.5]), &chain);
        assert_eq!(clipped.0[0], 3.0);
        let inside = clip_joints(&JointState::from_vec(vec![1.25]), &chain);
        assert_eq!(inside.0[0], 1.25);
    }

    #[test]
    fn clip_moves_only_violating_components() {
        let chain = ChainSpec {
            joints: (0..3)
                .map(|_| JointSpec {
                    axis: Unit::new_normalize(Vector3::z()),
                    origin: Pose::identity(),
                    limits: [-1.0, 1.0],
                })
                .collect(),
            links: (0..3)
                .map(|j| LinkSpec {
                    joint: j,
                    offset: Pose::identity(),
                    half_extents: Vector3::repeat(0.1),
                })
                .collect(),
            attached: None,
        };
        let q = JointState::from_vec(vec![-2.0, 0.5, 7.0]);
        let clipped = clip_joints(&q, &chain);
        assert_eq!(clipped.0.as_slice(), &[-1.0, 0.5, 1.0]);
    }

    #[test]
    fn clip_is_idempotent_and_a_projection() {
        let chain = ChainSpec::default_arm();
        let mut rng = stream(8, "chain_clip", 0, 0);
        for _ in 0..100 {
            let q = JointState(DVector::from_fn(chain.dof(), |_, _| rng.gen_range(-8.0..8.0)));
            let once = clip_joints(&q, &chain);
            let twice = clip_joints(&once, &chain);
            assert_eq!(once, twice);
            // No in-box point is closer to q than the clamp.
            let inside = random_state(&chain, &mut rng);
            assert!((q.0.clone() - once.0.clone()).norm() <= (q.0.clone() - inside.0).norm() + 1e-12);
        }
    }

    #[test]
    fn extended_planar_chain_has_no_self_collision() {
        let chain = ChainSpec::default_arm();
        assert!(!self_collision(&chain, &JointState::from_vec(vec![0.0, 0.0, 0.0])));
    }

    #[test]
    fn folded_chain_collides_and_adjacent_links_are_exempt() {
        let chain = ChainSpec::default_arm();
        // Fold joint 2 fully back: link 3 comes back over link 1.
        let folded = JointState::from_vec(vec![0.0, 0.1, 3.1]);
        assert!(self_collision(&chain, &folded));
        // Bend at the elbow: links 2 and 3 touch near their shared joint but
        // are adjacent, and links 1/3 stay apart.
        let bent = JointState::from_vec(vec![0.0, 0.0, -1.2]);
        assert!(!self_collision(&chain, &bent));

        // Independent AABB check of the folded case, via per-axis interval
        // membership on a voxel lattice.
        let cuboids = fk(&chain, &folded);
        let a = extents(&vertices(&cuboids[0]));
        let b = extents(&vertices(&cuboids[2]));
        let r = 1e-3;
        let mut counts = [0usize; 3];
        for axis in 0..3 {
            let mut n = 0;
            let mut x = -3.0 + r / 2.0;
            while x < 3.0 {
                if x > a.lo[axis] && x < a.hi[axis] && x > b.lo[axis] && x < b.hi[axis] {
                    n += 1;
                }
                x += r;
            }
            counts[axis] = n;
        }
        assert!(counts.iter().all(|&n| n > 0), "voxel oracle disagrees: {counts:?}");
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = ChainSpec::default_arm();
        let text = chain_to_json(&chain);
        let back = chain_from_json(&text).unwrap();
        assert_eq!(back.dof(), chain.dof());
        assert_eq!(back.links.len(), chain.links.len());
        for (a, b) in chain.joints.iter().zip(back.joints.iter()) {
            assert_eq!(a.limits, b.limits);
            assert_eq!(a.axis.into_inner(), b.axis.into_inner());
            assert_eq!(a.origin, b.origin);
        }
    }

    #[test]
    fn chain_json_rejects_unknown_fields_and_bad_values() {
        let mut doc: serde_json::Value = serde_json::from_str(&chain_to_json(&ChainSpec::default_arm())).unwrap();
        doc["surprise"] = serde_json::json!(1);
        assert!(chain_from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&chain_to_json(&ChainSpec::default_arm())).unwrap();
        doc["joints"][0]["axis"] = serde_json::json!([0.0, 0.0, 2.0]);
        let err = chain_from_json(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("joints[0].axis"), "{err}");

        let mut doc: serde_json::Value = serde_json::from_str(&chain_to_json(&ChainSpec::default_arm())).unwrap();
        doc["joints"][1]["origin"]["rotation"] = serde_json::json!([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.1],
            [0.0, 0.0, 1.0]
        ]);
        let err = chain_from_json(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("joints[1].origin.rotation"), "{err}");
    }
}
