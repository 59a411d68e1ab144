//! Training loop: sample a batch, forward-diffuse to a random timestep,
//! pin the endpoint rows, regress the injected noise with an L2 loss, and
//! take an Adam step. Conditioned rows are excluded from the loss since
//! their noise target is overwritten.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::CheckpointMeta;
use super::net::{quantize, DenoiserParams, GradBuffer, NetConfig};
use super::DiffusionSchedule;
use crate::chain::Trajectory;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub timesteps: usize,
    pub beta_max: f64,
    pub widths: [usize; 3],
    pub temb: usize,
    pub kernel: usize,
    /// Pin rows 0 and h-1 of `x_t` to the clean endpoints during training.
    pub condition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            batch: 256,
            learning_rate: 2e-4,
            seed: 0,
            timesteps: 64,
            beta_max: 0.02,
            widths: [32, 64, 128],
            temb: 32,
            kernel: 5,
            condition: true,
        }
    }
}

pub struct TrainOutput {
    pub params: DenoiserParams,
    pub meta: CheckpointMeta,
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &DenoiserParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut DenoiserParams, grads: &GradBuffer, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for (ti, tensor) in params.tensors_mut().into_iter().enumerate() {
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            let g = &grads.slots[ti];
            for i in 0..tensor.data.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                tensor.data[i] = quantize(tensor.data[i] - update);
            }
        }
    }
}

/// Train a denoiser on a dataset of clean trajectories. Deterministic for a
/// fixed seed: batch membership, timesteps and noise all come from streams
/// keyed by `(step, sample)` and the gradient reduction order is fixed.
pub fn train(data: &[Trajectory], cfg: &TrainConfig) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let h = data[0].horizon();
    let m = data[0].dim();
    for (i, traj) in data.iter().enumerate() {
        if traj.horizon() != h || traj.dim() != m {
            return Err(Error::Config(format!(
                "dataset trajectory {i} has shape {}x{}, expected {h}x{m}",
                traj.horizon(),
                traj.dim()
            )));
        }
    }
    let sched = DiffusionSchedule::new(cfg.timesteps, cfg.beta_max)?;
    let net_cfg = NetConfig { m, h, widths: cfg.widths, temb: cfg.temb, kernel: cfg.kernel };
    let mut params = DenoiserParams::init(net_cfg, cfg.seed)?;
    let mut adam = Adam::new(&params);
    let mut loss_history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for i in 0..cfg.batch {
            let mut rng = stream(cfg.seed, "train", step as u64, i as u64);
            let idx = rng.gen_range(0..data.len());
            let t = rng.gen_range(1..=cfg.timesteps);
            let x0 = &data[idx];
            let ab = sched.alpha_bar(t);
            let (sx, se) = (ab.sqrt(), (1.0 - ab).sqrt());
            // Build x_t and the eps target directly in channel-major layout.
            let mut x_t = vec![0.0; m * h];
            let mut target = vec![0.0; m * h];
            for l in 0..h {
                for c in 0..m {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    target[c * h + l] = eps;
                    x_t[c * h + l] = sx * x0.states()[(l, c)] + se * eps;
                }
            }
            if cfg.condition {
                for c in 0..m {
                    x_t[c * h] = x0.states()[(0, c)];
                    x_t[c * h + h - 1] = x0.states()[(h - 1, c)];
                }
            }
            batch.push((x_t, t, target));
        }
        let (loss, grads) = params.loss_and_grads(&batch, cfg.condition)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        adam.apply(&mut params, &grads, cfg.learning_rate);
        loss_history.push(loss);
    }

    let meta = CheckpointMeta {
        arch: format!("{} cond={}", params.config().descriptor(), u8::from(cfg.condition)),
        m,
        h,
        timesteps: cfg.timesteps,
        beta_max: cfg.beta_max,
        seed: cfg.seed,
        steps: cfg.steps,
    };
    Ok(TrainOutput { params, meta, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn constant_dataset(n: usize, h: usize, m: usize) -> Vec<Trajectory> {
        let states = DMatrix::from_fn(h, m, |k, j| 0.1 * k as f64 - 0.3 * j as f64);
        vec![Trajectory::new(states); n]
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 40,
            batch: 8,
            learning_rate: 2e-3,
            seed: 11,
            timesteps: 8,
            beta_max: 0.02,
            widths: [4, 8, 8],
            temb: 8,
            kernel: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train(&[], &tiny_cfg()), Err(Error::Config(_))));
    }

    #[test]
    fn mixed_shapes_rejected() {
        let mut data = constant_dataset(2, 8, 2);
        data.push(Trajectory::zeros(8, 3));
        assert!(train(&data, &tiny_cfg()).is_err());
    }

    #[test]
    fn loss_decreases_on_memorizable_data() {
        let data = constant_dataset(4, 8, 2);
        let cfg = TrainConfig {
            steps: 300,
            batch: 16,
            learning_rate: 3e-3,
            timesteps: 16,
            ..tiny_cfg()
        };
        let out = train(&data, &cfg).unwrap();
        // Per-step losses are noisy (random batch, timestep and noise), so
        // compare window means instead of single endpoints.
        let head: f64 = out.loss_history[..30].iter().sum::<f64>() / 30.0;
        let tail: f64 = out.loss_history[270..].iter().sum::<f64>() / 30.0;
        assert!(tail < 0.8 * head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let data = constant_dataset(3, 8, 2);
        let cfg = tiny_cfg();
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        for (ta, tb) in a.params.tensors().iter().zip(b.params.tensors().iter()) {
            assert_eq!(ta.data, tb.data, "tensor {} differs", ta.name);
        }
    }
}
