use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Variances below this are floored (with a warning).
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    MeanMcar,
    MeanPlm,
    ThetaG,
    ThetaT,
    TauG,
    TauT,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::MeanMcar => "mean_mcar",
            Estimand::MeanPlm => "mean_plm",
            Estimand::ThetaG => "theta_g",
            Estimand::ThetaT => "theta_t",
            Estimand::TauG => "tau_g",
            Estimand::TauT => "tau_t",
        }
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean_mcar" => Estimand::MeanMcar,
            "mean_plm" => Estimand::MeanPlm,
            "theta_g" => Estimand::ThetaG,
            "theta_t" => Estimand::ThetaT,
            "tau_g" => Estimand::TauG,
            "tau_t" => Estimand::TauT,
            other => return Err(Error::invalid(format!("unknown estimand {other:?}"))),
        })
    }
}

/// Where the second-moment term of a variance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    ExternalGram,
    PrimaryOnly,
    ConservativeDiag,
}

/// Diagnostics of one penalized nuisance fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostic {
    pub fold: usize,
    /// `outcome`, `propensity` or `outcome_plm`.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<u8>,
    pub lambda: f64,
    pub support_size: usize,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub nuisances: Vec<NuisanceDiagnostic>,
    pub variance_source: Option<VarianceSource>,
    pub warnings: Vec<String>,
}

/// Per-arm means behind an ATE estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmEstimates {
    pub treated: f64,
    pub control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub point: f64,
    /// Estimate of the n-scaled asymptotic variance.
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub level: f64,
    pub n: usize,
    pub n_labeled: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<ArmEstimates>,
    pub diagnostics: Diagnostics,
}

/// Two-sided standard normal quantile for a confidence `level`.
pub fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Floor a raw variance estimate, recording a warning when it was negative.
pub(crate) fn floor_variance(raw: f64, warnings: &mut Vec<String>) -> f64 {
    if raw < VARIANCE_FLOOR {
        warnings.push(format!("raw variance {raw:e} floored at {VARIANCE_FLOOR:e}"));
        VARIANCE_FLOOR
    } else {
        raw
    }
}

impl EstimateReport {
    /// Assemble a report; the interval is `point ± z·sqrt(variance/n)`.
    pub fn build(
        estimand: Estimand,
        point: f64,
        variance: Option<f64>,
        level: f64,
        n: usize,
        n_labeled: usize,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let z = z_quantile(level)?;
        let se = variance.map(|v| (v / n as f64).sqrt());
        let ci = se.map(|s| (point - z * s, point + z * s));
        Ok(EstimateReport { estimand, point, variance, se, ci, level, n, n_labeled, arms: None, diagnostics })
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }

    pub fn ci_length(&self) -> Option<f64> {
        self.ci.map(|(lo, hi)| hi - lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_for_95() {
        assert!((z_quantile(0.95).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(z_quantile(1.0).is_err());
    }

    #[test]
    fn ci_is_symmetric() {
        let r = EstimateReport::build(Estimand::MeanMcar, 2.0, Some(4.0), 0.95, 100, 30, Diagnostics::default())
            .unwrap();
        let z = z_quantile(0.95).unwrap();
        assert_eq!(r.se, Some(0.2));
        let (lo, hi) = r.ci.unwrap();
        assert!((lo - (2.0 - z * 0.2)).abs() < 1e-15 && (hi - (2.0 + z * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn negative_variance_is_floored() {
        let mut w = Vec::new();
        assert_eq!(floor_variance(-3.0, &mut w), VARIANCE_FLOOR);
        assert_eq!(w.len(), 1);
        assert_eq!(floor_variance(2.0, &mut w), 2.0);
        assert_eq!(w.len(), 1);
    }
}
