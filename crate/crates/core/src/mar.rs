//! Mean estimation under covariate-dependent labeling.
//!
//! For every fold the complement is split in two halves. The propensity
//! coefficients come from the exponential-tilt loss on the first half, where
//! external units enter through the summary mean; the outcome regression is
//! then fitted on the labeled rows of the second half with odds weights
//! `exp(−xᵀα̂)`. Two doubly robust estimators are built from these nuisances:
//! one for the whole population (`theta_g`) and one for the external
//! population only (`theta_t`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EstimatorConfig};
use crate::data::{make_folds, ExternalSummary, FoldPlan, PrimaryDataset};
use crate::error::{Error, Result};
use crate::link::{inverse_logistic, odds_weight};
use crate::mcar::{diagnostic, gram_quadratic, row_dot, ROLE_OUTCOME, ROLE_PROPENSITY};
use crate::optim::{dot, fit_with_rule, select_rows, CvFamily, PenalizedFit, QuadSpec, TiltSpec};
use crate::report::{floor_variance, Diagnostics, EstimateReport, Estimand, VarianceSource};

/// Nuisance fits for one cross-fitting fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldNuisance {
    pub propensity: PenalizedFit,
    pub outcome: PenalizedFit,
}

impl FoldNuisance {
    /// Constant nuisances, bypassing estimation.
    pub fn fixed(propensity: Vec<f64>, outcome: Vec<f64>) -> Self {
        FoldNuisance { propensity: PenalizedFit::fixed(propensity), outcome: PenalizedFit::fixed(outcome) }
    }
}

/// Second-moment information available for a variance estimate.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SecondMoment<'a> {
    Gram(&'a DMatrix<f64>),
    Diag(&'a [f64]),
}

impl SecondMoment<'_> {
    /// `βᵀΞβ`, or its diagonal upper bound `‖β‖₀ Σⱼ βⱼ² Ξⱼⱼ`.
    pub(crate) fn quadratic(&self, beta: &[f64]) -> f64 {
        match self {
            SecondMoment::Gram(g) => gram_quadratic(g, beta),
            SecondMoment::Diag(d) => conservative_quadratic(beta, d),
        }
    }

    pub(crate) fn source(&self) -> VarianceSource {
        match self {
            SecondMoment::Gram(_) => VarianceSource::ExternalGram,
            SecondMoment::Diag(_) => VarianceSource::ConservativeDiag,
        }
    }
}

/// Cauchy–Schwarz bound on `βᵀΞβ` from the diagonal of `Ξ` alone.
pub fn conservative_quadratic(beta: &[f64], diag: &[f64]) -> f64 {
    let nnz = beta.iter().filter(|b| **b != 0.0).count().max(1) as f64;
    nnz * beta.iter().zip(diag).filter(|(b, _)| **b != 0.0).map(|(b, d)| b * b * d).sum::<f64>()
}

/// Run `f` with the richest second-moment information in `summary`.
pub(crate) fn with_second_moment<T>(summary: &ExternalSummary, f: impl FnOnce(SecondMoment<'_>) -> T) -> Option<T> {
    if let Some(g) = summary.gram() {
        return Some(f(SecondMoment::Gram(g)));
    }
    summary.gram_diag().map(|d| f(SecondMoment::Diag(&d)))
}

fn arm_error(arm: Option<u8>, what: &str, fallback: Error) -> Error {
    match arm {
        Some(a) => Error::DegenerateArm { arm: a, reason: what.to_string() },
        None => fallback,
    }
}

/// Fit the propensity and outcome nuisances of every fold of `plan` against
/// the covariate mean `mean` of the unlabeled group. `arm` only tags seeds,
/// diagnostics and errors.
pub(crate) fn fit_fold_nuisances(
    data: &PrimaryDataset,
    mean: &[f64],
    plan: &FoldPlan,
    cfg: &EstimatorConfig,
    arm: Option<u8>,
    diagnostics: &mut Diagnostics,
) -> Result<Vec<FoldNuisance>> {
    let arm_tag = arm.map_or(2, u64::from);
    let mut out = Vec::with_capacity(plan.k);
    for (k, comp) in plan.complements.iter().enumerate() {
        let (alpha_half, beta_half) = match (&comp.alpha, &comp.beta) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::invalid("fold plan was built without half splits")),
        };
        if alpha_half.labeled.is_empty() {
            return Err(arm_error(arm, "propensity half has no labeled units", Error::UnboundedPropensity));
        }
        let xa = select_rows(data.x(), &alpha_half.labeled);
        let tilt = CvFamily::Tilt(TiltSpec {
            x: &xa,
            mean,
            external: alpha_half.external as f64,
            normalizer: alpha_half.size as f64,
            penalize_intercept: cfg.penalize_intercept,
        });
        let seed = derive_seed(cfg.seed, &[k as u64, ROLE_PROPENSITY, arm_tag]);
        let (propensity, _) = fit_with_rule(&tilt, cfg.propensity_rule(), seed, &cfg.solver)
            .map_err(|e| match (arm, e) {
                (Some(a), Error::UnboundedPropensity) => {
                    Error::DegenerateArm { arm: a, reason: "unbounded propensity loss".into() }
                }
                (_, e) => e,
            })?;
        diagnostics.nuisances.push(diagnostic(k, "propensity", arm, &propensity));

        if beta_half.labeled.is_empty() {
            return Err(arm_error(arm, "outcome half has no labeled units", Error::EmptyLabeledFold { fold: k }));
        }
        let xb = select_rows(data.x(), &beta_half.labeled);
        let yb: Vec<f64> = beta_half.labeled.iter().map(|&i| data.y()[i]).collect();
        let mut clamped = propensity.clamped;
        let wb: Vec<f64> = (0..xb.nrows())
            .map(|i| {
                let t: f64 = (0..xb.ncols()).map(|j| xb[(i, j)] * propensity.beta[j]).sum();
                if t.abs() > crate::optim::EXP_CLAMP {
                    clamped = true;
                }
                odds_weight(t.clamp(-crate::optim::EXP_CLAMP, crate::optim::EXP_CLAMP))
            })
            .collect();
        let quad = CvFamily::Quad(QuadSpec {
            x: &xb,
            y: &yb,
            weights: &wb,
            normalizer: beta_half.size as f64,
            penalize_intercept: cfg.penalize_intercept,
        });
        let seed = derive_seed(cfg.seed, &[k as u64, ROLE_OUTCOME, arm_tag]);
        let (mut outcome, _) = fit_with_rule(&quad, &cfg.lambda, seed, &cfg.solver)?;
        outcome.clamped |= clamped;
        diagnostics.nuisances.push(diagnostic(k, "outcome", arm, &outcome));
        out.push(FoldNuisance { propensity, outcome });
    }
    Ok(out)
}

/// Per-unit pieces shared by the point and variance formulas of one arm.
pub(crate) struct FoldTerms {
    /// Labeled units of the fold: (fitted outcome, residual, linear propensity index).
    pub labeled: Vec<(usize, f64, f64, f64)>,
    pub external: usize,
    pub mean_fit: f64,
}

pub(crate) fn fold_terms(data: &PrimaryDataset, plan: &FoldPlan, mean: &[f64], nuis: &[FoldNuisance]) -> Vec<FoldTerms> {
    plan.folds
        .iter()
        .zip(nuis)
        .map(|(fold, fn_)| FoldTerms {
            labeled: fold
                .labeled
                .iter()
                .map(|&i| {
                    let pred = row_dot(data, i, &fn_.outcome.beta);
                    let index = row_dot(data, i, &fn_.propensity.beta);
                    (i, pred, data.y()[i] - pred, index)
                })
                .collect(),
            external: fold.external,
            mean_fit: dot(mean, &fn_.outcome.beta),
        })
        .collect()
}

/// Inverse-propensity weight `1/g(t)`, clipped per `cfg`.
pub(crate) fn weight_g(t: f64, cfg: &EstimatorConfig) -> f64 {
    cfg.clip(inverse_logistic(t))
}

/// Odds weight `exp(−t)`, clipped per `cfg`.
pub(crate) fn weight_t(t: f64, cfg: &EstimatorConfig) -> f64 {
    cfg.clip(odds_weight(t))
}

pub(crate) fn point_g(terms: &[FoldTerms], n: f64, cfg: &EstimatorConfig) -> f64 {
    let mut s = 0.0;
    for f in terms {
        for &(_, pred, r, t) in &f.labeled {
            s += pred + weight_g(t, cfg) * r;
        }
        s += f.external as f64 * f.mean_fit;
    }
    s / n
}

/// `gammas` are the fold labeled fractions of the original labeling.
pub(crate) fn point_t(terms: &[FoldTerms], gammas: &[f64], n: f64, cfg: &EstimatorConfig) -> Result<f64> {
    let mut s = 0.0;
    for (k, f) in terms.iter().enumerate() {
        let q = 1.0 - gammas[k];
        if q <= 0.0 {
            return Err(Error::NoExternalMass { fold: k });
        }
        for &(_, _, r, t) in &f.labeled {
            s += weight_t(t, cfg) * r / q;
        }
        s += f.external as f64 / q * f.mean_fit;
    }
    Ok(s / n)
}

/// Fitted nuisances with their fold plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarFit {
    pub plan: FoldPlan,
    pub nuisances: Vec<FoldNuisance>,
    pub diagnostics: Diagnostics,
}

/// Fit the nuisances of both estimators on a fresh fold plan.
pub fn fit_nuisances(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<MarFit> {
    cfg.validate()?;
    data.check_summary(summary)?;
    let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, true)?;
    fit_nuisances_on(data, summary, plan, cfg)
}

/// Fit the nuisances on a given plan (which must carry half splits).
pub fn fit_nuisances_on(
    data: &PrimaryDataset,
    summary: &ExternalSummary,
    plan: FoldPlan,
    cfg: &EstimatorConfig,
) -> Result<MarFit> {
    let mut diagnostics = Diagnostics::default();
    let nuisances = fit_fold_nuisances(data, summary.mean(), &plan, cfg, None, &mut diagnostics)?;
    Ok(MarFit { plan, nuisances, diagnostics })
}

impl MarFit {
    /// Wrap externally supplied nuisances (one per fold of `plan`).
    pub fn with_nuisances(plan: FoldPlan, nuisances: Vec<FoldNuisance>) -> Result<Self> {
        if nuisances.len() != plan.k {
            return Err(Error::Dimension { expected: plan.k, found: nuisances.len() });
        }
        Ok(MarFit { plan, nuisances, diagnostics: Diagnostics::default() })
    }

    fn terms(&self, data: &PrimaryDataset, summary: &ExternalSummary) -> Vec<FoldTerms> {
        fold_terms(data, &self.plan, summary.mean(), &self.nuisances)
    }

    pub fn point_g(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> f64 {
        point_g(&self.terms(data, summary), self.plan.n_total() as f64, cfg)
    }

    pub fn point_t(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<f64> {
        point_t(&self.terms(data, summary), &self.plan.gamma_hats(), self.plan.n_total() as f64, cfg)
    }

    fn raw_variance_g(&self, terms: &[FoldTerms], theta: f64, sm: SecondMoment<'_>, cfg: &EstimatorConfig) -> f64 {
        let n = self.plan.n_total() as f64;
        let mut s = 0.0;
        for (f, nu) in terms.iter().zip(&self.nuisances) {
            s += f.external as f64 * sm.quadratic(&nu.outcome.beta);
            for &(_, pred, r, t) in &f.labeled {
                s += (pred + weight_g(t, cfg) * r).powi(2);
            }
        }
        s / n - theta * theta
    }

    fn raw_variance_t(&self, terms: &[FoldTerms], theta: f64, sm: SecondMoment<'_>, cfg: &EstimatorConfig) -> f64 {
        let n = self.plan.n_total() as f64;
        let gammas = self.plan.gamma_hats();
        let mut s = 0.0;
        for (k, (f, nu)) in terms.iter().zip(&self.nuisances).enumerate() {
            let q = 1.0 - gammas[k];
            let beta = &nu.outcome.beta;
            s += f.external as f64 / (q * q) * (sm.quadratic(beta) + theta * theta - 2.0 * f.mean_fit * theta);
            for &(_, _, r, t) in &f.labeled {
                let w = weight_t(t, cfg);
                s += w * w * r * r / (q * q);
            }
        }
        s / n
    }

    /// Unfloored variance of `theta_g` under the richest available second moments.
    pub fn variance_g(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Option<(f64, VarianceSource)> {
        let terms = self.terms(data, summary);
        let theta = point_g(&terms, self.plan.n_total() as f64, cfg);
        with_second_moment(summary, |sm| (self.raw_variance_g(&terms, theta, sm, cfg), sm.source()))
    }

    pub fn variance_t(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<Option<(f64, VarianceSource)>> {
        let terms = self.terms(data, summary);
        let theta = point_t(&terms, &self.plan.gamma_hats(), self.plan.n_total() as f64, cfg)?;
        Ok(with_second_moment(summary, |sm| (self.raw_variance_t(&terms, theta, sm, cfg), sm.source())))
    }

    /// Diagonal-only variance bound for `theta_g`, ignoring any full gram.
    pub fn conservative_variance_g(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<f64> {
        let diag = summary.gram_diag().ok_or(Error::VarianceUnavailable)?;
        let terms = self.terms(data, summary);
        let theta = point_g(&terms, self.plan.n_total() as f64, cfg);
        Ok(self.raw_variance_g(&terms, theta, SecondMoment::Diag(&diag), cfg))
    }

    /// Diagonal-only variance bound for `theta_t`, ignoring any full gram.
    pub fn conservative_variance_t(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<f64> {
        let diag = summary.gram_diag().ok_or(Error::VarianceUnavailable)?;
        let terms = self.terms(data, summary);
        let theta = point_t(&terms, &self.plan.gamma_hats(), self.plan.n_total() as f64, cfg)?;
        Ok(self.raw_variance_t(&terms, theta, SecondMoment::Diag(&diag), cfg))
    }

    pub fn report_g(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
        let point = self.point_g(data, summary, cfg);
        let var = self.variance_g(data, summary, cfg);
        build_report(Estimand::ThetaG, point, var, data, self.diagnostics.clone(), cfg)
    }

    pub fn report_t(&self, data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
        let point = self.point_t(data, summary, cfg)?;
        let var = self.variance_t(data, summary, cfg)?;
        build_report(Estimand::ThetaT, point, var, data, self.diagnostics.clone(), cfg)
    }
}

/// Report with the variance ladder applied: missing second moments drop the
/// interval (or fail under `require_ci`).
pub(crate) fn build_report(
    estimand: Estimand,
    point: f64,
    variance: Option<(f64, VarianceSource)>,
    data: &PrimaryDataset,
    mut diagnostics: Diagnostics,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    let variance = match variance {
        Some((raw, source)) => {
            diagnostics.variance_source = Some(source);
            Some(floor_variance(raw, &mut diagnostics.warnings))
        }
        None if cfg.require_ci => return Err(Error::VarianceUnavailable),
        None => {
            diagnostics.warnings.push("no second-moment summary: confidence interval omitted".into());
            None
        }
    };
    if let Some(c) = cfg.clip_weights {
        diagnostics.warnings.push(format!("inverse-propensity weights clipped at {c}"));
    }
    EstimateReport::build(estimand, point, variance, cfg.level, data.n_total(), data.n_labeled(), diagnostics)
}

pub fn estimate_theta_g(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    fit_nuisances(data, summary, cfg)?.report_g(data, summary, cfg)
}

pub fn estimate_theta_t(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    fit_nuisances(data, summary, cfg)?.report_t(data, summary, cfg)
}
