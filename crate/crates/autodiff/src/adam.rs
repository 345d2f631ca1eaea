//! Adam with bias correction and the warmup + cosine learning-rate schedule.

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One bias-corrected update using the gradients stored in `params`,
    /// which are zeroed afterwards. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, lr: Real) -> Result<()> {
        assert_eq!(
            self.first_moment.len(),
            params.len(),
            "optimizer state does not match parameter store"
        );
        for (_, p) in params.iter() {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient {
                    name: p.name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for j in 0..values.len() {
                let g = grads[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Linear warmup followed by cosine decay from `base` to `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: Real,
    pub floor: Real,
    pub warmup_fraction: Real,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 5e-4,
            floor: 2.5e-5,
            warmup_fraction: 0.02,
            total_steps: 200_000,
        }
    }
}

impl LrSchedule {
    /// Learning rate for the zero-based `step`.
    pub fn at(&self, step: u64) -> Real {
        let total = self.total_steps.max(1) as Real;
        let warmup = (self.warmup_fraction * total).floor();
        let s = step as Real;
        if s < warmup {
            return self.base * (s + 1.0) / warmup;
        }
        let span = (total - warmup).max(1.0);
        let progress = ((s - warmup) / span).clamp(0.0, 1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI as Real * progress).cos());
        self.floor + (self.base - self.floor) * cosine
    }
}
