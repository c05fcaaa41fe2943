//! AdamW with decoupled weight decay:
//!
//! ```text
//! m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
//! m̂ = m/(1−β₁ᵗ)            v̂ = v/(1−β₂ᵗ)
//! p ← p − lr·m̂/(√v̂+ε) − lr·wd·p
//! ```

use serde::{Deserialize, Serialize};

use crate::numerics::params::ParamStore;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = |_| Vec::new();
        AdamWState {
            config,
            step: 0,
            m: (0..params.len()).map(zeros).collect(),
            v: (0..params.len()).map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// Applies one update using the gradients accumulated on `params`.
    /// Trainable parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), NumericsError> {
        for id in params.ids() {
            let t = params.get(id);
            if let Some(g) = &t.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite { op: "adamw_step" });
                }
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in params.ids() {
            let t = params.get_mut(id);
            if !t.requires_grad {
                continue;
            }
            let n = t.len();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.len() != n {
                m.resize(n, 0.0);
                v.resize(n, 0.0);
            }
            let grad = t.grad.take();
            let data = t.data_mut();
            for j in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let p = data[j];
                data[j] = p - lr * m_hat / (v_hat.sqrt() + eps) - lr * weight_decay * p;
            }
            t.grad = grad;
        }
        Ok(())
    }
}
