use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup followed by cosine annealing down to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    base_lr: f64,
    warmup_steps: u64,
    total_steps: u64,
    min_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64, min_lr: f64) -> Result<Self> {
        if total_steps == 0 || warmup_steps >= total_steps {
            return Err(Error::Parameter(format!(
                "need 0 <= warmup_steps < total_steps, got {warmup_steps} and {total_steps}"
            )));
        }
        if !(base_lr > 0.0) || !(0.0..=base_lr).contains(&min_lr) {
            return Err(Error::Parameter(format!(
                "need 0 <= min_lr <= base_lr with base_lr > 0, got {min_lr} and {base_lr}"
            )));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
            min_lr,
        })
    }

    /// Warmup length as a fraction of the total, rounded down.
    pub fn with_warmup_fraction(
        base_lr: f64,
        warmup_fraction: f64,
        total_steps: u64,
        min_lr: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::Parameter(format!(
                "warmup fraction must lie in [0, 1), got {warmup_fraction}"
            )));
        }
        let warmup = (warmup_fraction * total_steps as f64).floor() as u64;
        Self::new(base_lr, warmup, total_steps, min_lr)
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Learning rate at `step`. Steps past `total_steps` get `min_lr`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step > self.total_steps {
            return self.min_lr;
        }
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        // Written as a drop from base_lr so the warmup endpoint is exact.
        self.base_lr - 0.5 * (self.base_lr - self.min_lr) * (1.0 - (PI * progress).cos())
    }
}
