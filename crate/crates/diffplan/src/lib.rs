//! Diffusion-based motion planning for cuboid-link kinematic chains.
//!
//! The pipeline has two halves. Offline, a denoising diffusion model is
//! trained on smooth joint-space trajectories, with the first and last
//! waypoints pinned to the trajectory endpoints at every diffusion step.
//! Online, a batch of noisy trajectories is denoised for a new scene while
//! an ensemble of differentiable collision costs (intersection volume and
//! swept volume, each with its own clearance/expansion/weight schedule)
//! steers every reverse step toward collision-free regions. The trajectory
//! with the lowest final swept volume is returned.
//!
//! Modules follow the pipeline: [`geom`] (oriented cuboids and overlap
//! volumes), [`chain`] (differentiable forward kinematics), [`diffusion`]
//! (schedule, denoiser network, training, checkpoints), [`guidance`]
//! (cost gradients and the guided planner), [`worldgen`] (scenes and
//! training data), [`eval`] (collision oracle, metrics, benchmarks) and
//! [`cli`] (the `diffplan` binary).

pub mod chain;
pub mod cli;
pub mod diffusion;
pub mod eval;
pub mod geom;
pub mod gradcheck;
pub mod guidance;
pub mod rng;
pub mod worldgen;

/// Errors shared across the crate.
///
/// `Invalid` carries a dotted field path so file-format rejections can name
/// the offending field (e.g. `obstacles[2].half_extents`).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("checkpoint mismatch\n  expected: {expected}\n  found:    {found}")]
    CheckpointMismatch { expected: String, found: String },
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("non-finite activation in layer `{layer}`")]
    NonFinite { layer: &'static str },
    #[error("generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { path: path.into(), reason: reason.into() }
    }

    /// True for malformed inputs (bad files, bad flags) as opposed to
    /// domain failures such as a diverged training run.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::Invalid { .. }
                | Error::CheckpointMismatch { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
