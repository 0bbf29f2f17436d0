//! Adam with a staircase exponential learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::DeepONetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay_steps: 5000,
            decay_rate: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `lr * rate^floor(step / decay_steps)`.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.decay_rate.powi((step / self.decay_steps.max(1)) as i32)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("optimizer.lr must be positive (got {})", self.lr));
        }
        if self.decay_steps == 0 {
            out.push("optimizer.decay_steps must be positive".into());
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            out.push(format!("optimizer.decay_rate must lie in (0, 1] (got {})", self.decay_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("optimizer.{name} must lie in [0, 1) (got {b})"));
            }
        }
        if !(self.eps > 0.0) {
            out.push(format!("optimizer.eps must be positive (got {})", self.eps));
        }
        out
    }
}

/// Parameters, moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DeepONetParams,
    pub m: DeepONetParams,
    pub v: DeepONetParams,
    pub step: u64,
}

impl TrainState {
    pub fn new(params: DeepONetParams) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        Self { params, m, v, step: 0 }
    }
}

/// One bias-corrected Adam update using the learning rate of the current step.
pub fn adam_step(state: &mut TrainState, grad: &DeepONetParams, cfg: &AdamConfig) -> Result<()> {
    if grad.n_params() != state.params.n_params() {
        return Err(Error::Shape("gradient and parameters differ in size".into()));
    }
    let lr = cfg.lr_at(state.step);
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let tensors = state
        .params
        .tensors_mut()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(grad.tensors());
    for (((p, m), v), g) in tensors {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    state.step += 1;
    Ok(())
}
