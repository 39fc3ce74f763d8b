use serde::{Deserialize, Serialize};

use crate::autodiff::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Exponential decay `base * (final/base)^(step/total)` with an optional
/// reduced-rate warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub final_lr: f64,
    pub total_steps: u64,
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default = "default_warmup_factor")]
    pub warmup_factor: f64,
}

fn default_warmup_factor() -> f64 {
    0.1
}

impl LrSchedule {
    pub fn exponential(base_lr: f64, final_lr: f64, total_steps: u64) -> Self {
        Self {
            base_lr,
            final_lr,
            total_steps,
            warmup_steps: 0,
            warmup_factor: default_warmup_factor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.final_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(())
    }

    /// Decay curve alone, without warmup.
    pub fn decayed(&self, step: u64) -> f64 {
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * (self.final_lr / self.base_lr).powf(frac)
    }

    pub fn lr(&self, step: u64) -> f64 {
        let lr = self.decayed(step);
        if step < self.warmup_steps {
            lr * self.warmup_factor
        } else {
            lr
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, schedule: LrSchedule, adam: AdamConfig) -> Self {
        let zeros = || {
            store
                .groups()
                .iter()
                .map(|g| vec![T::zero(); g.data.len()])
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            schedule,
            adam,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// One bias-corrected Adam update at `lr(step)`; returns the rate used.
    pub fn adam_step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<f64> {
        if grads.groups.len() != store.len() || self.first_moment.len() != store.len() {
            return Err(Error::Config("optimizer state does not match parameters".into()));
        }
        for (g, group) in grads.groups.iter().zip(store.groups()) {
            if g.len() != group.data.len() {
                return Err(Error::Config(format!(
                    "gradient for `{}` has {} entries, expected {}",
                    group.name,
                    g.len(),
                    group.data.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::training(&group.name, "non-finite gradient"));
            }
        }
        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2_sqrt = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(eps);
        for (((group, g), m), v) in store
            .groups_mut()
            .iter_mut()
            .zip(&grads.groups)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let denom = v[i].sqrt() * inv_bc2_sqrt + eps;
                group.data[i] -= step_size * m[i] / denom;
            }
        }
        self.step += 1;
        Ok(lr)
    }
}
