//! RMSprop and plain SGD with linear learning-rate warmup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Rmsprop,
    Sgd,
}

/// Learning rate for 1-indexed `step` under linear warmup.
pub fn warmup_lr(lr: f64, step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        lr
    } else {
        lr * (step as f64 / warmup_steps as f64).min(1.0)
    }
}

/// Running squared-gradient average plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub square_avg: Vec<f64>,
    pub step: usize,
}

impl RmsPropState {
    pub fn new(len: usize) -> Self {
        Self {
            square_avg: vec![0.0; len],
            step: 0,
        }
    }
}

fn check(theta: &[f64], grad: &[f64], len: usize) -> Result<()> {
    if theta.len() != grad.len() || grad.len() != len {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// One RMSprop update in place:
/// `v = d v + (1 - d) g^2`, `theta -= lr_t g / (sqrt(v) + eps)`.
pub fn rmsprop_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut RmsPropState,
    lr: f64,
    warmup_steps: usize,
) -> Result<()> {
    check(theta, grad, state.square_avg.len())?;
    state.step += 1;
    let lr = warmup_lr(lr, state.step, warmup_steps);
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(&mut state.square_avg) {
        *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
        *t -= lr * g / (v.sqrt() + RMSPROP_EPS);
    }
    Ok(())
}

/// Optimizer state for either kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    warmup_steps: usize,
    state: RmsPropState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, warmup_steps: usize, len: usize) -> Self {
        Self {
            kind,
            lr,
            warmup_steps,
            state: RmsPropState::new(len),
        }
    }

    pub fn steps(&self) -> usize {
        self.state.step
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Rmsprop => {
                rmsprop_step(theta, grad, &mut self.state, self.lr, self.warmup_steps)
            }
            OptimizerKind::Sgd => {
                check(theta, grad, self.state.square_avg.len())?;
                self.state.step += 1;
                let lr = warmup_lr(self.lr, self.state.step, self.warmup_steps);
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g;
                }
                Ok(())
            }
        }
    }
}
