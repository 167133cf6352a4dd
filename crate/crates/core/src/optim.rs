//! AdamW with decoupled weight decay.
//!
//! One optimizer instance owns the moment buffers for a fixed list of
//! parameter tensors and updates all of them each step, so the shared step
//! counter gives every buffer the same bias correction. Weight decay is
//! decoupled: parameters shrink by `lr * weight_decay` directly instead of
//! having the decay folded into the gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid(format!(
                "betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if self.weight_decay < 0.0 || self.epsilon < 0.0 {
            return Err(Error::invalid(
                "weight decay and epsilon must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl AdamW {
    /// Creates an optimizer for parameters with the given shapes.
    pub fn new(config: AdamWConfig, shapes: &[&[usize]]) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. `params[i]` and `grads[i]` must match the shape
    /// the optimizer was created with. A zero gradient with zero weight decay
    /// leaves the parameter bitwise unchanged.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer step: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            if params[i].shape() != self.first_moment[i].shape() {
                return Err(Error::invalid(format!(
                    "optimizer step: parameter {i} shape {:?} does not match state {:?}",
                    params[i].shape(),
                    self.first_moment[i].shape()
                )));
            }
            if grads[i].shape() != params[i].shape() {
                return Err(Error::invalid(format!(
                    "optimizer step: gradient {i} shape {:?} does not match parameter {:?}",
                    grads[i].shape(),
                    params[i].shape()
                )));
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params[i].data_mut();
            let g = grads[i].data();
            let decay = 1.0 - c.learning_rate * c.weight_decay;
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                let denom = v_hat.sqrt() + c.epsilon;
                // 0/0 (zero gradient, zero epsilon) is a fixed point, not NaN.
                let update = if m_hat == 0.0 { 0.0 } else { m_hat / denom };
                p[k] = p[k] * decay - c.learning_rate * update;
            }
            params[i].ensure_finite("optimizer step")?;
        }
        Ok(())
    }
}
