use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{LambdaRule, SolverOptions};

/// Settings shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Cross-fitting folds.
    pub folds: usize,
    pub level: f64,
    pub seed: u64,
    pub lambda: LambdaRule,
    /// Separate rule for the propensity fits (defaults to `lambda`).
    pub lambda_propensity: Option<LambdaRule>,
    pub solver: SolverOptions,
    pub penalize_intercept: bool,
    /// Upper bound on inverse-propensity weights; `None` leaves them untouched.
    pub clip_weights: Option<f64>,
    /// Fail instead of omitting the interval when no variance is computable.
    pub require_ci: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            folds: 5,
            level: 0.95,
            seed: 0,
            lambda: LambdaRule::default(),
            lambda_propensity: None,
            solver: SolverOptions::default(),
            penalize_intercept: false,
            clip_weights: None,
            require_ci: false,
        }
    }
}

impl EstimatorConfig {
    pub fn with_seed(seed: u64) -> Self {
        EstimatorConfig { seed, ..Default::default() }
    }

    pub(crate) fn propensity_rule(&self) -> &LambdaRule {
        self.lambda_propensity.as_ref().unwrap_or(&self.lambda)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("at least 2 folds required"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid(format!("confidence level {} outside (0, 1)", self.level)));
        }
        if let Some(c) = self.clip_weights {
            if !(c >= 1.0) {
                return Err(Error::invalid("weight clip must be at least 1"));
            }
        }
        Ok(())
    }

    pub(crate) fn clip(&self, w: f64) -> f64 {
        match self.clip_weights {
            Some(c) => w.min(c),
            None => w,
        }
    }
}

/// Seed for a sub-task, mixed from the base seed and a tag path.
pub(crate) fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = seed;
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
