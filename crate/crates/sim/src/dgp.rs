//! Data-generating processes.
//!
//! Every process draws `x[0] = 1` and `x[j]`, `j ≥ 1`, iid standard normal
//! truncated to `[-2, 2]`. Only the leading `relevant_dim()` coordinates
//! enter the labeling, treatment and outcome mechanisms.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use summint_core::link::logistic;
use summint_core::plm::PlmDataset;
use summint_core::{summarize_external, ExternalSummary, PrimaryDataset};

use crate::error::{Result, SimError};

/// Bound of the truncated normal covariates.
pub const TRUNCATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// Linear potential outcomes, treatment probability `0.3 sin(x[1]) + 0.5`,
    /// arm-specific logistic labeling.
    A,
    /// Quadratic potential outcomes, logistic joint labeling-and-treatment
    /// probabilities.
    B,
    /// Linear outcome, labeling independent of everything.
    McarLinear,
    /// Logistic labeling with a quadratic outcome (the fitted linear outcome
    /// model is wrong, the propensity model right).
    MarWrongOutcome,
    /// Linear outcome with labeling logistic in a quadratic index (the
    /// propensity model is wrong, the outcome model right).
    MarWrongPropensity,
    /// Linear in `x` plus `z²` with `z` uniform on `[-2, 2]`, labeling
    /// independent of everything.
    PlmNonlinear,
}

impl Dgp {
    pub const ALL: [Dgp; 6] =
        [Dgp::A, Dgp::B, Dgp::McarLinear, Dgp::MarWrongOutcome, Dgp::MarWrongPropensity, Dgp::PlmNonlinear];

    pub fn as_str(self) -> &'static str {
        match self {
            Dgp::A => "a",
            Dgp::B => "b",
            Dgp::McarLinear => "mcar_linear",
            Dgp::MarWrongOutcome => "mar_wrong_outcome",
            Dgp::MarWrongPropensity => "mar_wrong_propensity",
            Dgp::PlmNonlinear => "plm_nonlinear",
        }
    }

    pub fn has_treatment(self) -> bool {
        matches!(self, Dgp::A | Dgp::B)
    }

    pub fn has_z(self) -> bool {
        self == Dgp::PlmNonlinear
    }

    /// Whether the labeled fraction is set through the intercept of a
    /// labeling index (as opposed to a fixed probability).
    pub fn calibrated(self) -> bool {
        matches!(self, Dgp::A | Dgp::B | Dgp::MarWrongOutcome | Dgp::MarWrongPropensity)
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dgp {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        Dgp::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| SimError::Scenario(format!("unknown data-generating process `{s}`")))
    }
}

/// Standard normal conditioned on `|v| ≤ 2`, by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() <= TRUNCATION {
            return v;
        }
    }
}

/// Variance of the truncated normal, `1 − 2·2φ(2)/(2Φ(2) − 1)`.
pub fn truncated_variance() -> f64 {
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let n = Normal::standard();
    1.0 - 2.0 * TRUNCATION * n.pdf(TRUNCATION) / (2.0 * n.cdf(TRUNCATION) - 1.0)
}

/// Conditional quantities given covariates, used by the truth oracle and
/// the calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditional {
    /// `P(Γ = 1 | X)`.
    pub p_label: f64,
    /// `E[Y | X]`.
    pub mean_y: f64,
    /// `E[Y | X, Γ = 0]`.
    pub mean_y_unlabeled: f64,
    /// `E[Y(1) − Y(0) | X]`.
    pub effect: f64,
}

/// A fully parameterized process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub dgp: Dgp,
    pub d: usize,
    pub s_alpha: usize,
    pub s_beta: usize,
    /// Intercept of the labeling index (calibrated processes only).
    pub alpha_n: f64,
    /// Labeling probability of the processes with independent labeling.
    pub gamma: f64,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.s_alpha < 2 || self.s_beta < 1 {
            return bad("s_alpha must be at least 2 and s_beta at least 1".into());
        }
        if matches!(self.dgp, Dgp::A | Dgp::B) && self.s_beta < 2 {
            return bad("processes a and b need s_beta ≥ 2".into());
        }
        if self.d < self.s_alpha + 2 || self.d < self.s_beta + 2 {
            return bad(format!("d = {} too small for s_alpha = {}, s_beta = {}", self.d, self.s_alpha, self.s_beta));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("labeled fraction {} outside (0, 1)", self.gamma));
        }
        if self.dgp == Dgp::B && self.alpha_n > 0.0 {
            return bad("process b needs a nonpositive labeling intercept".into());
        }
        Ok(())
    }

    /// Number of leading coordinates (intercept included) any mechanism reads.
    pub fn relevant_dim(&self) -> usize {
        self.s_alpha.max(self.s_beta) + 1
    }

    /// Labeling index coefficients of arm 1 (the only arm outside a and b).
    pub fn alpha(&self, arm: u8) -> Vec<f64> {
        let sign = if arm == 1 { 1.0 } else { -1.0 };
        let mut a = vec![0.0; self.d];
        a[0] = self.alpha_n;
        a[1] = sign;
        let rest = (self.s_alpha - 1) as f64;
        for v in a.iter_mut().take(self.s_alpha + 1).skip(2) {
            *v = sign / rest;
        }
        a
    }

    /// Outcome coefficients. Processes a and b use `±3(1, 1, 1/√(s−1), …)`,
    /// the others `(1, 1, …, 1, 0, …)` with `s_beta` ones after the intercept.
    pub fn beta(&self, arm: u8) -> Vec<f64> {
        let mut b = vec![0.0; self.d];
        match self.dgp {
            Dgp::A | Dgp::B => {
                let sign = if arm == 1 { 3.0 } else { -3.0 };
                b[0] = sign;
                b[1] = sign;
                let root = ((self.s_beta - 1) as f64).sqrt();
                for v in b.iter_mut().take(self.s_beta + 1).skip(2) {
                    *v = sign / root;
                }
            }
            _ => {
                for v in b.iter_mut().take(self.s_beta + 1) {
                    *v = 1.0;
                }
            }
        }
        b
    }

    /// Quadratic coefficients of process b, `±0.5(−24, 1, 1/(s−1), …)`.
    pub fn quadratic(&self, arm: u8) -> Vec<f64> {
        let sign = if arm == 1 { 0.5 } else { -0.5 };
        let mut v = vec![0.0; self.d];
        v[0] = -24.0 * sign;
        v[1] = sign;
        let rest = (self.s_beta - 1) as f64;
        for c in v.iter_mut().take(self.s_beta + 1).skip(2) {
            *c = sign / rest;
        }
        v
    }

    fn dot_prefix(coef: &[f64], x: &[f64], len: usize) -> f64 {
        coef.iter().zip(x).take(len).map(|(a, b)| a * b).sum()
    }

    /// Linear labeling index `x α₁` of the logistic processes.
    fn index(&self, x: &[f64]) -> f64 {
        let a = self.alpha(1);
        Self::dot_prefix(&a, x, self.s_alpha + 1)
    }

    fn arm_mean(&self, x: &[f64], arm: u8) -> f64 {
        let k = self.s_beta + 1;
        let lin = Self::dot_prefix(&self.beta(arm), x, k);
        match self.dgp {
            Dgp::B => {
                let v = self.quadratic(arm);
                5.0 * lin + v.iter().zip(x).take(k).map(|(c, xi)| c * xi * xi).sum::<f64>()
            }
            _ => lin,
        }
    }

    /// Mean outcome of the single-arm processes given `x`.
    fn outcome_mean(&self, x: &[f64]) -> f64 {
        let lin = Self::dot_prefix(&self.beta(1), x, self.s_beta + 1);
        match self.dgp {
            Dgp::MarWrongOutcome => lin + x[1..=self.s_beta].iter().map(|v| v * v).sum::<f64>(),
            Dgp::PlmNonlinear => lin + 4.0 / 3.0,
            _ => lin,
        }
    }

    fn label_probability_single(&self, x: &[f64]) -> f64 {
        match self.dgp {
            Dgp::McarLinear | Dgp::PlmNonlinear => self.gamma,
            Dgp::MarWrongOutcome => logistic(self.index(x)),
            Dgp::MarWrongPropensity => logistic(self.index(x) + 0.75 * x[1] * x[1]),
            Dgp::A | Dgp::B => unreachable!("two-arm processes"),
        }
    }

    fn treatment_probability_a(x: &[f64]) -> f64 {
        0.3 * x[1].sin() + 0.5
    }

    /// Conditional quantities at `x` (at least `relevant_dim()` entries).
    pub fn conditional(&self, x: &[f64]) -> Conditional {
        match self.dgp {
            Dgp::A => {
                let pa = Self::treatment_probability_a(x);
                let g1 = logistic(Self::dot_prefix(&self.alpha(1), x, self.s_alpha + 1));
                let g0 = logistic(Self::dot_prefix(&self.alpha(0), x, self.s_alpha + 1));
                let (m1, m0) = (self.arm_mean(x, 1), self.arm_mean(x, 0));
                let p_label = pa * g1 + (1.0 - pa) * g0;
                let un1 = pa * (1.0 - g1);
                let un0 = (1.0 - pa) * (1.0 - g0);
                Conditional {
                    p_label,
                    mean_y: pa * m1 + (1.0 - pa) * m0,
                    mean_y_unlabeled: (un1 * m1 + un0 * m0) / (un1 + un0),
                    effect: m1 - m0,
                }
            }
            Dgp::B => {
                let g1 = logistic(Self::dot_prefix(&self.alpha(1), x, self.s_alpha + 1));
                let g0 = logistic(Self::dot_prefix(&self.alpha(0), x, self.s_alpha + 1));
                let pa = (g1 - g0 + 1.0) / 2.0;
                let (m1, m0) = (self.arm_mean(x, 1), self.arm_mean(x, 0));
                let un1 = pa - g1;
                let un0 = 1.0 - pa - g0;
                Conditional {
                    p_label: g1 + g0,
                    mean_y: pa * m1 + (1.0 - pa) * m0,
                    mean_y_unlabeled: (un1 * m1 + un0 * m0) / (un1 + un0),
                    effect: m1 - m0,
                }
            }
            _ => {
                let m = self.outcome_mean(x);
                Conditional { p_label: self.label_probability_single(x), mean_y: m, mean_y_unlabeled: m, effect: 0.0 }
            }
        }
    }

    /// Draw the covariate row of one unit.
    pub fn draw_x<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(len);
        x.push(1.0);
        for _ in 1..len {
            x.push(truncated_normal(rng));
        }
        x
    }

    /// One unit: covariates, treatment, labeling and observed outcome.
    pub fn draw_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Unit {
        let x = self.draw_x(rng, self.d);
        let z = self.dgp.has_z().then(|| rng.random_range(-2.0..=2.0));
        let noise: f64 = rng.sample(StandardNormal);
        let (a, labeled, y) = match self.dgp {
            Dgp::A => {
                let a = u8::from(rng.random::<f64>() < Self::treatment_probability_a(&x));
                let g = logistic(Self::dot_prefix(&self.alpha(a), &x, self.s_alpha + 1));
                let labeled = rng.random::<f64>() < g;
                (Some(a), labeled, self.arm_mean(&x, a) + noise)
            }
            Dgp::B => {
                let g1 = logistic(Self::dot_prefix(&self.alpha(1), &x, self.s_alpha + 1));
                let g0 = logistic(Self::dot_prefix(&self.alpha(0), &x, self.s_alpha + 1));
                let pa = (g1 - g0 + 1.0) / 2.0;
                let a = u8::from(rng.random::<f64>() < pa);
                let (ga, pa_a) = if a == 1 { (g1, pa) } else { (g0, 1.0 - pa) };
                let labeled = rng.random::<f64>() < ga / pa_a;
                (Some(a), labeled, self.arm_mean(&x, a) + noise)
            }
            Dgp::PlmNonlinear => {
                let labeled = rng.random::<f64>() < self.gamma;
                let z = z.expect("drawn above");
                let y = Self::dot_prefix(&self.beta(1), &x, self.s_beta + 1) + z * z + noise;
                (None, labeled, y)
            }
            _ => {
                let labeled = rng.random::<f64>() < self.label_probability_single(&x);
                (None, labeled, self.outcome_mean(&x) + noise)
            }
        };
        Unit { x, z, a, labeled, y }
    }

    /// A sample of `n` units, reduced to what the estimators may see.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Replicate> {
        let mut lab_x = Vec::new();
        let mut lab_y = Vec::new();
        let mut lab_a = Vec::new();
        let mut lab_z = Vec::new();
        let mut ext_x = Vec::new();
        let mut ext_z = Vec::new();
        for _ in 0..n {
            let u = self.draw_unit(rng);
            if u.labeled {
                lab_x.push(u.x);
                lab_y.push(u.y);
                lab_a.extend(u.a);
                lab_z.extend(u.z.map(|z| vec![z]));
            } else {
                ext_x.push(u.x);
                ext_z.extend(u.z.map(|z| vec![z]));
            }
        }
        let n_ext = ext_x.len();
        let treatment = self.dgp.has_treatment().then_some(lab_a);
        let summary = summarize_external(&ext_x)?;
        let plm = if self.dgp.has_z() {
            let augment = |rows: &[Vec<f64>], z: &[Vec<f64>]| -> Vec<Vec<f64>> {
                rows.iter().zip(z).map(|(r, z)| r.iter().chain(z).copied().collect()).collect()
            };
            let w_lab = augment(&lab_x, &lab_z);
            let w_ext = augment(&ext_x, &ext_z);
            let linear = PrimaryDataset::from_rows(&w_lab, lab_y.clone(), None, n_ext)?;
            let linear_summary = summarize_external(&w_ext)?;
            let base = PrimaryDataset::from_rows(&lab_x, lab_y.clone(), None, n_ext)?;
            Some(PlmParts { data: PlmDataset::new(base, lab_z, ext_z)?, linear, linear_summary })
        } else {
            None
        };
        // External covariate rows go out of scope here; only the summary remains.
        let data = PrimaryDataset::from_rows(&lab_x, lab_y, treatment, n_ext)?;
        Ok(Replicate { data, summary, plm })
    }
}

/// One simulated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub z: Option<f64>,
    pub a: Option<u8>,
    pub labeled: bool,
    pub y: f64,
}

/// Partially linear inputs plus the same sample with `z` appended as a
/// linear covariate, for comparison.
#[derive(Debug, Clone)]
pub struct PlmParts {
    pub data: PlmDataset,
    pub linear: PrimaryDataset,
    pub linear_summary: ExternalSummary,
}

/// What an analyst sees: labeled rows and the external summary.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: PrimaryDataset,
    pub summary: ExternalSummary,
    pub plm: Option<PlmParts>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(dgp: Dgp) -> Model {
        Model { dgp, d: 201, s_alpha: 6, s_beta: 2, alpha_n: -1.5, gamma: 0.3 }
    }

    #[test]
    fn parameter_vectors() {
        let m = model(Dgp::A);
        let a1 = m.alpha(1);
        assert_eq!(&a1[..8], &[-1.5, 1.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.0]);
        assert_eq!(m.alpha(0)[2], -0.2);
        assert_eq!(&m.beta(1)[..4], &[3.0, 3.0, 3.0, 0.0]);
        assert_eq!(m.beta(0)[1], -3.0);
        assert_eq!(&m.quadratic(1)[..4], &[-12.0, 0.5, 0.5, 0.0]);
        assert_eq!(m.quadratic(0)[0], 12.0);
        let b6 = Model { s_beta: 6, ..model(Dgp::B) };
        assert!((b6.beta(1)[2] - 3.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!((b6.quadratic(1)[6] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn covariates_respect_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model(Dgp::B);
        for _ in 0..200 {
            let u = m.draw_unit(&mut rng);
            assert_eq!(u.x[0], 1.0);
            assert!(u.x.iter().all(|v| v.abs() <= 2.0));
        }
    }

    #[test]
    fn process_b_probabilities_are_valid() {
        let m = model(Dgp::B);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = m.draw_x(&mut rng, m.relevant_dim());
            let c = m.conditional(&x);
            assert!(c.p_label > 0.0 && c.p_label < 1.0);
        }
    }

    #[test]
    fn names_round_trip() {
        for d in Dgp::ALL {
            assert_eq!(d.as_str().parse::<Dgp>().unwrap(), d);
        }
        assert_eq!("mcar-linear".parse::<Dgp>().unwrap(), Dgp::McarLinear);
        assert!("c".parse::<Dgp>().is_err());
    }
}
