//! Median-based summaries of replication errors.

use serde::{Deserialize, Serialize};
use summint_core::Estimand;

/// Median (mean of the two middle values for even counts); `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// One estimator's row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimand,
    pub truth: f64,
    /// Median of `estimate − truth`.
    pub bias: f64,
    /// Median of `|estimate − truth|`.
    pub rmse_med: f64,
    /// Median interval length (replications with an interval only).
    pub length: Option<f64>,
    /// Fraction of intervals containing the truth.
    pub coverage: Option<f64>,
    /// Sample variance of the estimates across replications.
    pub empirical_variance: f64,
    /// Mean of the reported n-scaled variance estimates.
    pub mean_variance_estimate: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

/// Per-replication outcome fed to [`summarize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub point: f64,
    pub ci: Option<(f64, f64)>,
    pub variance: Option<f64>,
}

pub fn summarize(estimator: Estimand, truth: f64, outcomes: &[Outcome], failed: usize) -> EstimatorSummary {
    let errors: Vec<f64> = outcomes.iter().map(|o| o.point - truth).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let lengths: Vec<f64> = outcomes.iter().filter_map(|o| o.ci.map(|(lo, hi)| hi - lo)).collect();
    let covered = outcomes.iter().filter(|o| o.ci.is_some_and(|(lo, hi)| lo <= truth && truth <= hi)).count();
    let n = outcomes.len();
    let mean = outcomes.iter().map(|o| o.point).sum::<f64>() / n.max(1) as f64;
    let empirical_variance = if n > 1 {
        outcomes.iter().map(|o| (o.point - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        f64::NAN
    };
    let variances: Vec<f64> = outcomes.iter().filter_map(|o| o.variance).collect();
    EstimatorSummary {
        estimator,
        truth,
        bias: median(&errors).unwrap_or(f64::NAN),
        rmse_med: median(&abs).unwrap_or(f64::NAN),
        length: median(&lengths),
        coverage: (!lengths.is_empty()).then(|| covered as f64 / lengths.len() as f64),
        empirical_variance,
        mean_variance_estimate: (!variances.is_empty()).then(|| variances.iter().sum::<f64>() / variances.len() as f64),
        succeeded: n,
        failed,
    }
}
