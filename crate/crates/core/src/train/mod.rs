//! Two-phase pipeline: supervised fine-tuning, then preference alignment
//! against the frozen fine-tuned policy.

mod optimizer;
mod subsets;
mod trace;
mod trainer;

pub use optimizer::{
    rmsprop_step, warmup_lr, Optimizer, OptimizerKind, RmsPropState, RMSPROP_DECAY, RMSPROP_EPS,
};
pub use subsets::{classify, split_by_belief_share, BeliefShare, Subset, SubsetSplit};
pub use trace::{TraceRecord, TrainingTrace, TRACE_COLUMNS};
pub use trainer::{run_alignment, run_sft, run_uniform_sft, uniform_resample, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate every this many optimizer steps (plus step 0 and the end).
    pub eval_every: usize,
    pub seed: u64,
    /// Noise added by the noise reference baseline.
    pub noise_level: f64,
    pub align: AlignConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: 1e-2,
            warmup_steps: 150,
            batch_size: 32,
            epochs: 1,
            eval_every: 50,
            seed: 0,
            noise_level: 0.1,
            align: AlignConfig::default(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the policy untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and eval_every must be >= 1".into(),
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidArgument("noise_level must be >= 0".into()));
        }
        self.align.validate()
    }
}
