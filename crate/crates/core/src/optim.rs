//! Adam with bias-corrected moment estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::model::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
        }
    }

    pub fn check(&self, params: &[Param]) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return shape_err("AdamState", "parameter count", params.len(), self.m.len());
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if m.len() != p.tensor.len() || v.len() != p.tensor.len() {
                return invalid("AdamState", format!("moment shape mismatch for {}", p.name));
            }
        }
        Ok(())
    }
}

/// One update using the gradient held in each parameter's grad slot.
/// Parameters without a gradient are treated as having a zero gradient.
pub fn adam_step(params: &mut [Param], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    state.check(params)?;
    for p in params.iter() {
        if let Some(g) = p.tensor.grad() {
            if g.len() != p.tensor.len() {
                return shape_err("adam_step", "gradient", p.tensor.len(), g.len());
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - libm::pow(config.beta1, t);
    let correction2 = 1.0 - libm::pow(config.beta2, t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.take_grad();
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]);
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            data[i] -= config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.epsilon);
        }
    }
    Ok(())
}
