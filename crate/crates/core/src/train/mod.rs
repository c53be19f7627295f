//! Optimizers, the learning-rate schedule and single training steps.

pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::angular::K_MIN;
use crate::error::{Error, Result};
use crate::layers::{Mode, ParamRole};
use crate::network::{Model, Regularization};
use crate::tensor::Tensor;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Step schedule: `base_lr` divided by `divisor` at every boundary passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    #[serde(default)]
    pub boundaries: Vec<usize>,
    #[serde(default = "default_divisor")]
    pub divisor: f64,
}

fn default_divisor() -> f64 {
    10.0
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule {
            base_lr: lr,
            boundaries: Vec::new(),
            divisor: 10.0,
        }
    }

    pub fn validate(&self, total_iterations: usize) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.base_lr
            )));
        }
        if !(self.divisor > 0.0 && self.divisor.is_finite()) {
            return Err(Error::Config(format!(
                "schedule divisor must be positive, got {}",
                self.divisor
            )));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "schedule boundaries must be strictly increasing: {:?}",
                self.boundaries
            )));
        }
        if let Some(&last) = self.boundaries.last() {
            if last >= total_iterations {
                return Err(Error::Config(format!(
                    "schedule boundary {last} is not below the {total_iterations} total iterations"
                )));
            }
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &Schedule, iteration: usize) -> f64 {
    let passed = schedule.boundaries.iter().filter(|&&b| iteration >= b).count();
    schedule.base_lr / schedule.divisor.powi(passed as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {},
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {}
    }
}

/// One Adam update of `p` in place. `t` is the 1-based step count.
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Heavy-ball SGD: `v ← μ v + g`, `p ← p − η v`.
pub fn sgd_update(p: &mut [f64], g: &[f64], vel: &mut [f64], momentum: f64, lr: f64) {
    for i in 0..p.len() {
        vel[i] = momentum * vel[i] + g[i];
        p[i] -= lr * vel[i];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
    Sgd {
        momentum: f64,
        velocity: Vec<Vec<f64>>,
    },
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .param_infos()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        match config {
            OptimizerConfig::Adam {} => OptimizerState::Adam {
                m: zeros.clone(),
                v: zeros,
                step: 0,
            },
            OptimizerConfig::Sgd { momentum } => OptimizerState::Sgd {
                momentum,
                velocity: zeros,
            },
        }
    }

    /// Applies one update to every parameter block of `model`.
    pub fn apply(&mut self, model: &mut Model, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let sizes: Vec<usize> = model.param_infos().iter().map(|p| p.len()).collect();
        if grads.len() != sizes.len() || grads.iter().zip(&sizes).any(|(g, &n)| g.len() != n) {
            return Err(Error::shape(
                "gradient blocks do not match the model's parameters",
            ));
        }
        match self {
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let t = *step;
                model.visit_params_mut(&mut |i, _, p| {
                    adam_update(p, &grads[i], &mut m[i], &mut v[i], t, lr)
                });
            }
            OptimizerState::Sgd { momentum, velocity } => {
                let mu = *momentum;
                model.visit_params_mut(&mut |i, _, p| sgd_update(p, &grads[i], &mut velocity[i], mu, lr));
            }
        }
        Ok(())
    }
}

/// Per-step settings that do not change over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub reg: Regularization,
    pub k_min: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            reg: Regularization::default(),
            k_min: K_MIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
}

/// Forward, backward and one optimizer update on a batch. Metrics describe
/// the parameters before the update.
pub fn train_step(
    model: &mut Model,
    xs: &[Tensor],
    ys: &[usize],
    opt: &mut OptimizerState,
    lr: f64,
    cfg: &StepConfig,
    iteration: usize,
) -> Result<StepMetrics> {
    let ev = match model.evaluate(xs, ys, Mode::Train, &cfg.reg) {
        Err(Error::NonFinite { .. }) => return Err(Error::Divergence { iteration }),
        r => r?,
    };
    if !ev.loss.is_finite() {
        return Err(Error::Divergence { iteration });
    }
    let grad_norm = ev.grad_norm();
    if !grad_norm.is_finite() {
        return Err(Error::Divergence { iteration });
    }
    model.commit(&ev);
    opt.apply(model, &ev.grads, lr)?;
    let k_min = cfg.k_min;
    model.visit_params_mut(&mut |_, role, p| {
        if role == ParamRole::CurvatureK {
            p.iter_mut().for_each(|k| *k = k.max(k_min));
        }
    });
    model.enforce_constraints();
    Ok(StepMetrics {
        loss: ev.loss,
        accuracy: ev.correct as f64 / xs.len() as f64,
        grad_norm,
    })
}

#[cfg(test)]
mod tests;
