//! Mean estimation when labeling is independent of covariates and outcome.
//!
//! The outcome regression is cross-fitted on labeled rows; external units
//! enter the plug-in term only through the summary mean, and the correction
//! term reweights fold residuals by the fold's labeled fraction.

use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EstimatorConfig};
use crate::data::{make_folds, ExternalSummary, FoldPlan, PrimaryDataset};
use crate::error::Result;
use crate::optim::{dot, fit_with_rule, select_rows, CvFamily, PenalizedFit, QuadSpec};
use crate::report::{floor_variance, Diagnostics, EstimateReport, Estimand, NuisanceDiagnostic, VarianceSource};

pub(crate) const ROLE_OUTCOME: u64 = 1;
pub(crate) const ROLE_PROPENSITY: u64 = 2;
pub(crate) const ROLE_PLM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McarFit {
    pub plan: FoldPlan,
    pub fold_fits: Vec<PenalizedFit>,
    pub gamma_hats: Vec<f64>,
    pub report: EstimateReport,
}

/// Lasso of Y on X over the labeled rows of `rows`, penalty from the rule in `cfg`.
pub(crate) fn fit_outcome(
    data: &PrimaryDataset,
    rows: &[usize],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<(PenalizedFit, Option<crate::optim::CvOutcome>)> {
    let x = select_rows(data.x(), rows);
    let y: Vec<f64> = rows.iter().map(|&i| data.y()[i]).collect();
    let w = vec![1.0; rows.len()];
    let family = CvFamily::Quad(QuadSpec {
        x: &x,
        y: &y,
        weights: &w,
        normalizer: rows.len() as f64,
        penalize_intercept: cfg.penalize_intercept,
    });
    fit_with_rule(&family, &cfg.lambda, seed, &cfg.solver)
}

pub(crate) fn diagnostic(fold: usize, role: &str, arm: Option<u8>, fit: &PenalizedFit) -> NuisanceDiagnostic {
    NuisanceDiagnostic {
        fold,
        role: role.to_string(),
        arm,
        lambda: fit.lambda,
        support_size: fit.support.len(),
        iterations: fit.iterations,
        converged: fit.converged,
        clamped: fit.clamped,
    }
}

pub fn estimate_mean_mcar(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<McarFit> {
    cfg.validate()?;
    data.check_summary(summary)?;
    let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, false)?;
    let mut fold_fits = Vec::with_capacity(plan.k);
    let mut diagnostics = Diagnostics::default();
    for (k, comp) in plan.complements.iter().enumerate() {
        let (fit, _) = fit_outcome(data, &comp.all.labeled, cfg, derive_seed(cfg.seed, &[k as u64, ROLE_OUTCOME]))?;
        diagnostics.nuisances.push(diagnostic(k, "outcome", None, &fit));
        fold_fits.push(fit);
    }
    estimate_mean_mcar_with_fits(data, summary, plan, fold_fits, cfg, diagnostics)
}

/// Assemble the estimate from given fold fits (one per fold of `plan`).
pub fn estimate_mean_mcar_with_fits(
    data: &PrimaryDataset,
    summary: &ExternalSummary,
    plan: FoldPlan,
    fold_fits: Vec<PenalizedFit>,
    cfg: &EstimatorConfig,
    mut diagnostics: Diagnostics,
) -> Result<McarFit> {
    data.check_summary(summary)?;
    let gamma_hats = plan.gamma_hats();
    let n = plan.n_total() as f64;
    let mut total = 0.0;
    for (k, fold) in plan.folds.iter().enumerate() {
        let beta = &fold_fits[k].beta;
        let g = gamma_hats[k];
        for &i in &fold.labeled {
            let pred = row_dot(data, i, beta);
            total += pred + (data.y()[i] - pred) / g;
        }
        total += fold.external as f64 * dot(summary.mean(), beta);
    }
    let point = total / n;
    let mut fit = McarFit {
        plan,
        fold_fits,
        gamma_hats,
        report: EstimateReport::build(Estimand::MeanMcar, point, None, cfg.level, data.n_total(), data.n_labeled(), Diagnostics::default())?,
    };
    let (raw, source) = variance_mcar(&fit, data, summary);
    diagnostics.variance_source = Some(source);
    let variance = floor_variance(raw, &mut diagnostics.warnings);
    fit.report = EstimateReport::build(
        Estimand::MeanMcar,
        point,
        Some(variance),
        cfg.level,
        data.n_total(),
        data.n_labeled(),
        diagnostics,
    )?;
    Ok(fit)
}

#[inline]
pub(crate) fn row_dot(data: &PrimaryDataset, i: usize, beta: &[f64]) -> f64 {
    let x = data.x();
    beta.iter().enumerate().map(|(j, b)| x[(i, j)] * b).sum()
}

/// Quadratic form `βᵀ Ξ β` of the summary gram.
pub(crate) fn gram_quadratic(gram: &nalgebra::DMatrix<f64>, beta: &[f64]) -> f64 {
    let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let mut s = 0.0;
    for &a in &support {
        for &b in &support {
            s += beta[a] * gram[(a, b)] * beta[b];
        }
    }
    s
}

/// Unfloored variance estimate and where its second moments came from. With
/// an external gram this is the plug-in variance using `βᵀΞβ` per external
/// unit; otherwise the primary-only version.
pub fn variance_mcar(fit: &McarFit, data: &PrimaryDataset, summary: &ExternalSummary) -> (f64, VarianceSource) {
    let n = fit.plan.n_total() as f64;
    let theta = fit.report.point;
    match summary.gram() {
        Some(gram) => {
            let mut s = 0.0;
            for (k, fold) in fit.plan.folds.iter().enumerate() {
                let beta = &fit.fold_fits[k].beta;
                let g = fit.gamma_hats[k];
                for &i in &fold.labeled {
                    let pred = row_dot(data, i, beta);
                    s += (pred + (data.y()[i] - pred) / g).powi(2);
                }
                s += fold.external as f64 * gram_quadratic(gram, beta);
            }
            (s / n - theta * theta, VarianceSource::ExternalGram)
        }
        None => {
            let mut s = 0.0;
            for (k, fold) in fit.plan.folds.iter().enumerate() {
                let beta = &fit.fold_fits[k].beta;
                let g = fit.gamma_hats[k];
                for &i in &fold.labeled {
                    let pred = row_dot(data, i, beta);
                    let r = data.y()[i] - pred;
                    s += pred * pred / g + r * r / (g * g);
                }
            }
            (s / n - theta * theta, VarianceSource::PrimaryOnly)
        }
    }
}

/// Union of the fold supports plus the intercept: the only coordinates of
/// the external mean the estimate depends on.
pub fn required_support(fit: &McarFit) -> Vec<usize> {
    let mut s: Vec<usize> = std::iter::once(0).chain(fit.fold_fits.iter().flat_map(|f| f.support.iter().copied())).collect();
    s.sort_unstable();
    s.dedup();
    s
}
