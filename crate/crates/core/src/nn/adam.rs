use serde::{Deserialize, Serialize};

use super::params::LstmParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &LstmParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One bias-corrected Adam update. Non-finite gradients reject the step
    /// and leave both parameters and moments untouched.
    pub fn step(&mut self, params: &mut LstmParams, grads: &LstmParams) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.first.len()
            || g.iter().zip(&self.first).any(|(t, m)| t.len() != m.len())
        {
            return Err(Error::Shape("gradient layout does not match optimizer state".into()));
        }
        if g.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training(format!(
                "non-finite gradient at step {}",
                self.step + 1
            )));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, gt), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &gr), mi), vi) in p.data.iter_mut().zip(&gt.data).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gr;
                *vi = beta2 * *vi + (1.0 - beta2) * gr * gr;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut LstmParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}
