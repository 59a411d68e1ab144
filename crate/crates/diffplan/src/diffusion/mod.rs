//! Denoising diffusion over joint-space trajectories: the variance
//! schedule, the closed-form forward process, the ancestral reverse step,
//! endpoint conditioning, the denoiser network, training and checkpoints.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CheckpointMeta,
};
pub use net::{GradBuffer, NetConfig, DenoiserParams};
pub use train::{train, TrainConfig, TrainOutput};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::chain::{clip_trajectory, ChainSpec, JointState, Trajectory};
use crate::rng::stream;
use crate::{Error, Result};

/// The forward-process variance schedule: `beta_t = beta_max * t / T` for
/// `t = 1..=T` (linear, non-degenerate at the first step), with
/// `alpha_t = 1 - beta_t` and `alpha_bar_t` their running product.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(timesteps: usize, beta_max: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::Config("diffusion schedule needs T >= 1".into()));
        }
        if !(0.0 < beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "beta_max must lie in (0, 1), got {beta_max}"
            )));
        }
        let mut beta = Vec::with_capacity(timesteps);
        let mut alpha = Vec::with_capacity(timesteps);
        let mut alpha_bar = Vec::with_capacity(timesteps);
        let mut running = 1.0;
        for t in 1..=timesteps {
            let b = beta_max * t as f64 / timesteps as f64;
            beta.push(b);
            alpha.push(1.0 - b);
            running *= 1.0 - b;
            alpha_bar.push(running);
        }
        Ok(DiffusionSchedule { beta, alpha, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    /// `beta_t` for 1-based `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Reverse-step noise scale; the simple fixed choice `sigma_t = sqrt(beta_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }
}

/// Closed-form forward diffusion:
/// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(
    x0: &Trajectory,
    t: usize,
    eps: &DMatrix<f64>,
    sched: &DiffusionSchedule,
) -> Trajectory {
    assert!(t >= 1 && t <= sched.timesteps(), "t out of range");
    assert_eq!(eps.shape(), x0.states().shape());
    let ab = sched.alpha_bar(t);
    let scale_x = ab.sqrt();
    let scale_e = (1.0 - ab).sqrt();
    Trajectory::new(x0.states() * scale_x + eps * scale_e)
}

/// One ancestral reverse step:
/// `x_{t-1} = (x_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z`.
/// Callers must pass `z = 0` at `t = 1`.
pub fn reverse_step(
    x_t: &Trajectory,
    eps_hat: &DMatrix<f64>,
    t: usize,
    sched: &DiffusionSchedule,
    z: &DMatrix<f64>,
) -> Trajectory {
    Trajectory::new(posterior_mean(x_t, eps_hat, t, sched) + z * sched.sigma(t))
}

/// The deterministic part of the reverse step (the posterior mean).
pub fn posterior_mean(
    x_t: &Trajectory,
    eps_hat: &DMatrix<f64>,
    t: usize,
    sched: &DiffusionSchedule,
) -> DMatrix<f64> {
    assert!(t >= 1 && t <= sched.timesteps(), "t out of range");
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    (x_t.states() - eps_hat * ((1.0 - a) / (1.0 - ab).sqrt())) / a.sqrt()
}

/// Overwrite rows 0 and `h - 1` with the start and goal states; all other
/// rows are untouched.
pub fn condition_endpoints(x: &Trajectory, start: &JointState, goal: &JointState) -> Trajectory {
    let mut out = x.clone();
    out.set_waypoint(0, start);
    out.set_waypoint(x.horizon() - 1, goal);
    out
}

/// Draw an `h x m` matrix of standard normal noise from `rng`.
pub fn normal_matrix(h: usize, m: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    DMatrix::from_fn(h, m, |_, _| StandardNormal.sample(rng))
}

/// Sample `count` trajectories from the prior with endpoint conditioning
/// and per-step joint-limit clipping, no cost guidance. Noise streams are
/// keyed by trajectory index and timestep, so sampling is reproducible for
/// a fixed seed regardless of evaluation order; the keys match the guided
/// planner's, which degenerates to exactly this path when all guide
/// weights are zero.
pub fn sample_prior(
    params: &DenoiserParams,
    sched: &DiffusionSchedule,
    chain: &ChainSpec,
    start: &JointState,
    goal: &JointState,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    let h = params.config().h;
    let m = params.config().m;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "plan_init", i as u64, 0);
            let mut x = condition_endpoints(
                &Trajectory::new(normal_matrix(h, m, &mut rng)),
                start,
                goal,
            );
            for t in (1..=sched.timesteps()).rev() {
                let eps_hat = params.predict(&x, t)?;
                let mu = Trajectory::new(posterior_mean(&x, &eps_hat, t, sched));
                let mu = clip_trajectory(&mu, chain);
                let stepped = if t > 1 {
                    let mut zrng = stream(seed, "plan_z", t as u64, i as u64);
                    let z = normal_matrix(h, m, &mut zrng);
                    Trajectory::new(mu.states() + z * sched.sigma(t))
                } else {
                    mu
                };
                x = condition_endpoints(&stepped, start, goal);
            }
            Ok(x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn schedule_t4() -> DiffusionSchedule {
        DiffusionSchedule::new(4, 0.02).unwrap()
    }

    #[test]
    fn linear_schedule_values() {
        let s = schedule_t4();
        let expected = [0.005, 0.010, 0.015, 0.020];
        for (t, want) in (1..=4).zip(expected) {
            assert_relative_eq!(s.beta(t), want, epsilon = 1e-15);
            assert_relative_eq!(s.alpha(t), 1.0 - want, epsilon = 1e-15);
        }
        // Direct product oracle: 0.995 * 0.99 * 0.985 * 0.98.
        assert_relative_eq!(s.alpha_bar(4), 0.950868765, epsilon = 1e-12);
    }

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::new(1, 0.02).unwrap();
        assert_eq!(s.beta(1), 0.02);
        assert_relative_eq!(s.alpha_bar(1), 0.98, epsilon = 1e-15);
    }

    #[test]
    fn zero_timesteps_rejected() {
        assert!(DiffusionSchedule::new(0, 0.02).is_err());
        assert!(DiffusionSchedule::new(4, 0.0).is_err());
        assert!(DiffusionSchedule::new(4, 1.0).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_and_matches_naive_product() {
        let s = DiffusionSchedule::new(255, 0.02).unwrap();
        let mut product = 1.0;
        let mut prev = 1.0;
        for t in 1..=255 {
            product *= 1.0 - 0.02 * t as f64 / 255.0;
            assert!((s.alpha_bar(t) - product).abs() <= 1e-15);
            assert!(s.alpha_bar(t) < prev);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            prev = s.alpha_bar(t);
        }
    }

    #[test]
    fn forward_with_zero_noise_scales_signal() {
        let s = schedule_t4();
        let x0 = Trajectory::new(DMatrix::from_row_slice(2, 1, &[1.0, -2.0]));
        let eps = DMatrix::zeros(2, 1);
        let xt = forward_diffuse(&x0, 3, &eps, &s);
        let want = s.alpha_bar(3).sqrt();
        assert_relative_eq!(xt.states()[(0, 0)], want, epsilon = 1e-15);
        assert_relative_eq!(xt.states()[(1, 0)], -2.0 * want, epsilon = 1e-15);
    }

    #[test]
    fn forward_with_zero_signal_scales_noise() {
        let s = schedule_t4();
        let x0 = Trajectory::zeros(2, 1);
        let eps = DMatrix::from_row_slice(2, 1, &[0.7, -0.1]);
        let xt = forward_diffuse(&x0, 2, &eps, &s);
        let want = (1.0 - s.alpha_bar(2)).sqrt();
        assert_relative_eq!(xt.states()[(0, 0)], 0.7 * want, epsilon = 1e-15);
    }

    #[test]
    fn forward_scalar_hand_value() {
        let s = schedule_t4();
        let x0 = Trajectory::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let eps = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let xt = forward_diffuse(&x0, 4, &eps, &s);
        let want = 0.950868765f64.sqrt() + 0.5 * (1.0 - 0.950868765f64).sqrt();
        assert_relative_eq!(xt.states()[(0, 0)], want, epsilon = 1e-9);
        assert_relative_eq!(want, 1.0859528, epsilon = 1e-6);
    }

    #[test]
    fn forward_does_not_mutate_input() {
        let s = schedule_t4();
        let x0 = Trajectory::new(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]));
        let snapshot = x0.clone();
        let eps = DMatrix::from_row_slice(2, 1, &[0.3, 0.3]);
        let _ = forward_diffuse(&x0, 1, &eps, &s);
        assert_eq!(x0, snapshot);
    }

    #[test]
    fn reverse_step_scalar_hand_value() {
        let s = DiffusionSchedule::new(4, 0.02).unwrap();
        // At t = 1: alpha_1 = 0.995; with eps_hat = 0 and z = 0 the update is
        // x / sqrt(alpha_1) = 1.0025094...
        let x = Trajectory::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let zero = DMatrix::zeros(2, 1);
        let out = reverse_step(&x, &zero, 1, &s, &zero);
        assert_relative_eq!(out.states()[(0, 0)], 1.0 / 0.995f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(out.states()[(0, 0)], 1.0025094, epsilon = 1e-7);
    }

    #[test]
    fn reverse_step_zero_is_fixed_point() {
        let s = schedule_t4();
        let x = Trajectory::zeros(3, 2);
        let zero = DMatrix::zeros(3, 2);
        let out = reverse_step(&x, &zero, 2, &s, &zero);
        assert!(out.states().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_chain_with_zero_eps_contracts_by_alpha_product() {
        let s = schedule_t4();
        let mut x = Trajectory::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let zero = DMatrix::zeros(2, 1);
        for t in (1..=4).rev() {
            x = reverse_step(&x, &zero, t, &s, &zero);
        }
        let expected: f64 = (1..=4).map(|t| 1.0 / s.alpha(t).sqrt()).product();
        assert_relative_eq!(x.states()[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn condition_endpoints_is_idempotent_and_preserves_interior() {
        let mut rng = crate::rng::stream(9, "cond", 0, 0);
        let x = Trajectory::new(normal_matrix(10, 3, &mut rng));
        let s0 = JointState::from_vec(vec![0.1, 0.2, 0.3]);
        let sg = JointState::from_vec(vec![-0.5, 0.0, 0.5]);
        let once = condition_endpoints(&x, &s0, &sg);
        let twice = condition_endpoints(&once, &s0, &sg);
        assert_eq!(once, twice);
        for k in 1..9 {
            assert_eq!(once.states().row(k), x.states().row(k));
        }
        assert_eq!(once.waypoint(0).0, s0.0);
        assert_eq!(once.waypoint(9).0, sg.0);
    }

    #[test]
    fn conditioning_with_existing_endpoints_is_a_noop() {
        let mut rng = crate::rng::stream(10, "cond2", 0, 0);
        let x = Trajectory::new(normal_matrix(6, 2, &mut rng));
        let out = condition_endpoints(&x, &x.waypoint(0), &x.waypoint(5));
        assert_eq!(out, x);
    }

    /// Forward marginals: over many draws the sample mean approaches
    /// `sqrt(alpha_bar) x0` (within 3 standard errors) and the variance
    /// approaches `1 - alpha_bar` (within 3 percent).
    #[test]
    fn forward_marginal_statistics() {
        let timesteps = 64;
        let s = DiffusionSchedule::new(timesteps, 0.02).unwrap();
        let h = 4;
        let m = 4;
        let x0 = Trajectory::new(DMatrix::from_fn(h, m, |k, j| 0.3 * k as f64 - 0.2 * j as f64));
        let draws = 10_000;
        for t in [1, timesteps / 2, timesteps] {
            let ab = s.alpha_bar(t);
            let mut rng = stream(20, "marginal", t as u64, 0);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let n = (draws * h * m) as f64;
            for _ in 0..draws {
                let eps = normal_matrix(h, m, &mut rng);
                let xt = forward_diffuse(&x0, t, &eps, &s);
                for k in 0..h {
                    for j in 0..m {
                        let centered = xt.states()[(k, j)] - ab.sqrt() * x0.states()[(k, j)];
                        sum += centered;
                        sumsq += centered * centered;
                    }
                }
            }
            let mean = sum / n;
            let var = sumsq / n - mean * mean;
            let se = ((1.0 - ab) / n).sqrt();
            assert!(mean.abs() <= 3.0 * se, "t={t}: mean {mean} vs 3se {}", 3.0 * se);
            let rel = (var - (1.0 - ab)).abs() / (1.0 - ab);
            assert!(rel <= 0.03, "t={t}: variance off by {rel}");
        }
    }
}
