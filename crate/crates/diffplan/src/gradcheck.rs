//! Finite-difference gradient suites, runnable from the `gradcheck`
//! subcommand and reused by the acceptance tests.
//!
//! Each suite compares an analytic gradient against central finite
//! differences on randomly generated inputs and reports the worst relative
//! error. The finite-difference side is computed only from cost/loss
//! evaluations, never from the gradient code it checks.

use nalgebra::{DMatrix, DVector, Unit, Vector3};
use rand::Rng;

use crate::chain::{fk, fk_grad, ChainSpec, JointSpec, JointState, LinkSpec, Trajectory};
use crate::diffusion::{DenoiserParams, NetConfig};
use crate::geom::{
    extents, extents_with_args, overlap_volume, overlap_volume_grad, vertices, Cuboid,
    ExpansionPolicy, Pose,
};
use crate::guidance::{j_inter, j_inter_grad, j_swept, j_swept_grad, Scene};
use crate::rng::stream;
use crate::Result;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub samples: usize,
    pub max_rel_err: f64,
}

impl SuiteResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn random_rotation(rng: &mut impl Rng) -> Pose {
    Pose::from_rpy(
        &Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.0..3.0),
        ),
        Vector3::zeros(),
    )
}

/// A random serial chain of one to five revolute joints, one link per
/// joint, varied axes/origins/offsets.
pub fn random_chain(rng: &mut impl Rng) -> ChainSpec {
    let m = rng.gen_range(1..=5);
    let joints = (0..m)
        .map(|_| {
            let axis = Vector3::new(
                rng.gen_range(-1.0f64..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
            JointSpec {
                axis: Unit::new_normalize(axis),
                origin: Pose::from_rpy(
                    &Vector3::new(
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                    ),
                    Vector3::new(
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    ),
                ),
                limits: [-std::f64::consts::PI, std::f64::consts::PI],
            }
        })
        .collect();
    let links = (0..m)
        .map(|j| LinkSpec {
            joint: j,
            offset: Pose::from_rpy(
                &Vector3::new(rng.gen_range(-0.5..0.5), 0.0, rng.gen_range(-0.5..0.5)),
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.1),
            ),
            half_extents: Vector3::new(
                rng.gen_range(0.08..0.35),
                rng.gen_range(0.08..0.35),
                rng.gen_range(0.08..0.35),
            ),
        })
        .collect();
    ChainSpec { joints, links, attached: None }
}

fn random_state(chain: &ChainSpec, rng: &mut impl Rng) -> JointState {
    JointState(DVector::from_fn(chain.dof(), |j, _| {
        rng.gen_range(chain.joints[j].limits[0] * 0.5..chain.joints[j].limits[1] * 0.5)
    }))
}

/// Overlap-volume gradient vs finite differences over all vertex
/// coordinates of both boxes, on overlapping configurations.
pub fn check_overlap_gradients(seed: u64, samples: usize) -> SuiteResult {
    let mut rng = stream(seed, "gc_overlap", 0, 0);
    let step = 1e-6;
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    while checked < samples {
        let ca = Cuboid::new(
            random_rotation(&mut rng),
            Vector3::new(
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.5),
            ),
        );
        let mut pose_b = random_rotation(&mut rng);
        pose_b.translation = Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        );
        let cb = Cuboid::new(
            pose_b,
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
        let comfortable = (0..3).all(|ax| {
            ea.extents.hi[ax].min(eb.extents.hi[ax]) - ea.extents.lo[ax].max(eb.extents.lo[ax])
                > 1e-3
        });
        if !comfortable {
            continue;
        }
        checked += 1;
        let (_, ga, gb) = overlap_volume_grad(&ea.extents, &eb.extents);
        for side in 0..2 {
            let (ext, grad) = if side == 0 { (&ea, &ga) } else { (&eb, &gb) };
            for vi in 0..8 {
                for axis in 0..3 {
                    let mut plus = if side == 0 { va } else { vb };
                    let mut minus = plus;
                    plus[vi][axis] += step;
                    minus[vi][axis] -= step;
                    let eval = |v: &[Vector3<f64>; 8]| {
                        if side == 0 {
                            overlap_volume(&extents(v), &eb.extents)
                        } else {
                            overlap_volume(&ea.extents, &extents(v))
                        }
                    };
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                    let mut an = 0.0;
                    if ext.arg_lo[axis] == vi {
                        an += grad.d_lo[axis];
                    }
                    if ext.arg_hi[axis] == vi {
                        an += grad.d_hi[axis];
                    }
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    max_rel = max_rel.max(rel);
                }
            }
        }
    }
    SuiteResult { name: "overlap_volume", samples, max_rel_err: max_rel }
}

/// FK vertex Jacobians vs finite differences on random chains and
/// configurations.
pub fn check_fk_gradients(seed: u64, samples: usize) -> SuiteResult {
    let mut rng = stream(seed, "gc_fk", 0, 0);
    let step = 1e-6;
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
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
                    num += (fd - g.vertex_jac[body][j][v]).norm_squared();
                    den += fd.norm_squared();
                }
            }
            max_rel = max_rel.max(num.sqrt() / den.sqrt().max(1e-9));
        }
    }
    SuiteResult { name: "fk", samples, max_rel_err: max_rel }
}

/// A random colliding triple: a random chain, a short wiggling trajectory
/// around a random configuration, and obstacles parked on the links so the
/// costs are active.
fn colliding_triple(rng: &mut impl Rng) -> (ChainSpec, Trajectory, Scene) {
    let chain = random_chain(rng);
    let m = chain.dof();
    let base: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.2..1.2)).collect();
    let cuboids = fk(&chain, &JointState::from_vec(base.clone()));
    let body = rng.gen_range(0..cuboids.len());
    let scene = Scene {
        name: "gradcheck".into(),
        obstacles: vec![
            Cuboid::new(
                Pose::from_translation(
                    cuboids[body].pose.translation
                        + Vector3::new(
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                        ),
                ),
                Vector3::new(
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.15..0.3),
                ),
            ),
            Cuboid::new(
                Pose::from_translation(Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.5..1.0),
                )),
                Vector3::repeat(rng.gen_range(0.1..0.25)),
            ),
        ],
        start: JointState::from_vec(base.clone()),
        goal: JointState::from_vec(base.clone()),
    };
    let h = 5;
    let tau = Trajectory::new(DMatrix::from_fn(h, m, |k, j| {
        base[j] + 0.05 * ((k * m + j) as f64).sin()
    }));
    (chain, tau, scene)
}

/// Cost gradients (both kinds) vs finite differences of the cost on random
/// colliding triples. Returns `(intersection, swept)` suites.
pub fn check_cost_gradients(seed: u64, samples: usize) -> (SuiteResult, SuiteResult) {
    let mut rng = stream(seed, "gc_cost", 0, 0);
    let step = 1e-6;
    let clearance = 0.05;
    let total = 8;
    let t = 3;
    let mut max_rel = [0.0f64; 2];
    let mut active = [0usize; 2];
    let mut checked = 0;
    while checked < samples {
        let (chain, tau, scene) = colliding_triple(&mut rng);
        // Require the intersection cost to be active so the sample is
        // informative.
        if j_inter(&tau, &scene, &chain, clearance, ExpansionPolicy::None, t, total) < 1e-4 {
            continue;
        }
        checked += 1;
        for (kind, slot) in [(0usize, 0usize), (1, 1)] {
            let eval = |tau: &Trajectory| {
                if kind == 0 {
                    j_inter(tau, &scene, &chain, clearance, ExpansionPolicy::None, t, total)
                } else {
                    j_swept(tau, &scene, &chain, clearance, ExpansionPolicy::None, t, total)
                }
            };
            if eval(&tau) < 1e-6 {
                continue;
            }
            active[slot] += 1;
            let (_, grad) = if kind == 0 {
                j_inter_grad(&tau, &scene, &chain, clearance, ExpansionPolicy::None, t, total)
            } else {
                j_swept_grad(&tau, &scene, &chain, clearance, ExpansionPolicy::None, t, total)
            };
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..tau.horizon() {
                for j in 0..tau.dim() {
                    let mut plus = tau.clone();
                    let mut minus = tau.clone();
                    plus.states_mut()[(k, j)] += step;
                    minus.states_mut()[(k, j)] -= step;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                    num += (fd - grad[(k, j)]).powi(2);
                    den += fd * fd;
                }
            }
            max_rel[slot] = max_rel[slot].max(num.sqrt() / den.sqrt().max(1e-12));
        }
    }
    (
        SuiteResult { name: "j_inter", samples: active[0], max_rel_err: max_rel[0] },
        SuiteResult { name: "j_swept", samples: active[1], max_rel_err: max_rel[1] },
    )
}

/// Denoiser loss gradients vs finite differences on a tiny network.
pub fn check_denoiser_gradients(seed: u64) -> Result<SuiteResult> {
    let cfg = NetConfig { m: 2, h: 8, widths: [4, 8, 8], temb: 8, kernel: 3 };
    let mut net = DenoiserParams::init(cfg, seed)?;
    // The zero-initialized head hides downstream gradients; give it values.
    let mut rng = stream(seed, "gc_net_head", 0, 0);
    for tensor in net.tensors_mut() {
        if tensor.name == "out.w" {
            for v in tensor.data.iter_mut() {
                *v = (rng.gen_range(-0.2..0.2f64) as f32) as f64;
            }
        }
    }
    let mut rng = stream(seed, "gc_net", 0, 0);
    let batch: Vec<(Vec<f64>, usize, Vec<f64>)> = (0..2)
        .map(|_| {
            let x: Vec<f64> = (0..cfg.m * cfg.h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..cfg.m * cfg.h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (x, rng.gen_range(1..=16), target)
        })
        .collect();
    let (_, grads) = net.loss_and_grads(&batch, true)?;
    let step = 1e-5;
    let mut max_rel = 0.0f64;
    let mut probes = 0;
    let tensor_count = net.tensors().len();
    for ti in 0..tensor_count {
        let len = net.tensors()[ti].data.len();
        let picks: Vec<usize> = if len <= 6 {
            (0..len).collect()
        } else {
            (0..6).map(|i| (i * 7919 + ti * 131) % len).collect()
        };
        for pi in picks {
            probes += 1;
            let orig = net.tensors()[ti].data[pi];
            net.tensors_mut()[ti].data[pi] = orig + step;
            let (lp, _) = net.loss_and_grads(&batch, true)?;
            net.tensors_mut()[ti].data[pi] = orig - step;
            let (lm, _) = net.loss_and_grads(&batch, true)?;
            net.tensors_mut()[ti].data[pi] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let an = grads.slots[ti][pi];
            max_rel = max_rel.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    Ok(SuiteResult { name: "denoiser_loss", samples: probes, max_rel_err: max_rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_their_tolerances() {
        assert!(check_overlap_gradients(1, 20).passes(1e-4));
        assert!(check_fk_gradients(2, 20).passes(1e-5));
        let (inter, swept) = check_cost_gradients(3, 20);
        assert!(inter.samples >= 15, "too few active intersection samples");
        assert!(swept.samples >= 15, "too few active swept samples");
        assert!(inter.passes(1e-4), "j_inter max rel err {}", inter.max_rel_err);
        assert!(swept.passes(1e-4), "j_swept max rel err {}", swept.max_rel_err);
        assert!(check_denoiser_gradients(4).unwrap().passes(1e-3));
    }
}
