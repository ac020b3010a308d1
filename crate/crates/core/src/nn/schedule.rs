use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up to `peak`, then cosine decay to `floor` at `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupCosine {
    pub warmup: u64,
    pub total: u64,
    pub peak: f64,
    pub floor: f64,
}

impl WarmupCosine {
    pub fn new(warmup: u64, total: u64, peak: f64, floor: f64) -> Result<Self> {
        let s = Self {
            warmup,
            total,
            peak,
            floor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup >= self.total {
            return Err(Error::Config(format!(
                "warm-up ({}) must be shorter than the schedule ({})",
                self.warmup, self.total
            )));
        }
        if !(self.peak.is_finite() && self.floor.is_finite() && self.floor >= 0.0 && self.peak >= self.floor) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= floor ({}) <= peak ({})",
                self.floor, self.peak
            )));
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        if step >= self.total {
            return self.floor;
        }
        let p = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
        self.floor + (self.peak - self.floor) * 0.5 * (1.0 + (PI * p).cos())
    }
}

/// Piecewise-constant decay by `factor` at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiStep {
    pub base: f64,
    pub milestones: Vec<u64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    0.3
}

impl MultiStep {
    pub fn new(base: f64, milestones: Vec<u64>) -> Self {
        Self {
            base,
            milestones,
            factor: default_factor(),
        }
    }

    pub fn lr(&self, epoch: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.factor.powi(passed as i32)
    }
}
