//! Average treatment effects from a labeled trial-like sample and external
//! covariate summaries.
//!
//! Each arm `a` is handled as a missing-data problem with the effective
//! labeling indicator `Γ·1{A = a}`. For the whole population (generalize),
//! labeled units of the other arm join the unlabeled group, whose mean is
//! rebuilt from the summary and their rows. For the external population
//! (transport), labeled units of the other arm are dropped from arm `a`'s
//! pipeline while still counting in fold sizes.

use crate::config::EstimatorConfig;
use crate::data::{make_folds, ExternalSummary, FoldPlan, PrimaryDataset};
use crate::error::{Error, Result};
use crate::mar::{
    build_report, fit_fold_nuisances, fold_terms, point_g, point_t, weight_g, weight_t, with_second_moment, FoldNuisance,
};
use crate::mcar::row_dot;
use crate::optim::dot;
use crate::report::{ArmEstimates, Diagnostics, EstimateReport, Estimand};

/// Covariate mean and size of the group with `Γ·1{A = a} = 0`: external
/// units plus labeled units of the other arm.
pub fn effective_summary_g(a: u8, summary: &ExternalSummary, data: &PrimaryDataset) -> Result<(Vec<f64>, usize)> {
    let treatment = treatment(data)?;
    data.check_summary(summary)?;
    let d = data.dim();
    let n_ext = summary.n_external();
    let mut sum: Vec<f64> = summary.mean().iter().map(|m| m * n_ext as f64).collect();
    let mut count = n_ext;
    for (i, &t) in treatment.iter().enumerate() {
        if t != a {
            count += 1;
            for (j, s) in sum.iter_mut().enumerate().take(d) {
                *s += data.x()[(i, j)];
            }
        }
    }
    if count == 0 {
        return Err(Error::DegenerateArm { arm: a, reason: "every unit is labeled in this arm".into() });
    }
    let mut mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    // A convex combination of ones; pin it against rounding.
    mean[0] = 1.0;
    Ok((mean, count))
}

fn treatment(data: &PrimaryDataset) -> Result<&[u8]> {
    data.treatment().ok_or_else(|| Error::invalid("treatment column required"))
}

fn check_arms(data: &PrimaryDataset) -> Result<()> {
    let t = treatment(data)?;
    for a in [0u8, 1] {
        if !t.contains(&a) {
            return Err(Error::DegenerateArm { arm: a, reason: "no labeled units".into() });
        }
    }
    Ok(())
}

/// Nuisances of both arms, indexed by arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmNuisances {
    pub control: Vec<FoldNuisance>,
    pub treated: Vec<FoldNuisance>,
}

impl ArmNuisances {
    fn arm(&self, a: u8) -> &[FoldNuisance] {
        if a == 1 {
            &self.treated
        } else {
            &self.control
        }
    }
}

fn arm_plan(data: &PrimaryDataset, plan: &FoldPlan, a: u8, to_external: bool) -> FoldPlan {
    let t = data.treatment().expect("treatment checked");
    plan.restrict(|i| t[i] == a, to_external)
}

fn difference(b1: &[f64], b0: &[f64]) -> Vec<f64> {
    b1.iter().zip(b0).map(|(a, b)| a - b).collect()
}

pub fn estimate_ate_generalize(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    check_arms(data)?;
    data.check_summary(summary)?;
    let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, true)?;
    let mut diagnostics = Diagnostics::default();
    let mut fits = Vec::with_capacity(2);
    for a in [0u8, 1] {
        let (mean, _) = effective_summary_g(a, summary, data)?;
        let plan_a = arm_plan(data, &plan, a, true);
        fits.push(fit_fold_nuisances(data, &mean, &plan_a, cfg, Some(a), &mut diagnostics)?);
    }
    let treated = fits.pop().expect("two arms");
    let control = fits.pop().expect("two arms");
    ate_generalize_with(data, summary, &plan, &ArmNuisances { control, treated }, cfg, diagnostics)
}

/// Generalize estimate from given nuisances on `plan`.
pub fn ate_generalize_with(
    data: &PrimaryDataset,
    summary: &ExternalSummary,
    plan: &FoldPlan,
    nuis: &ArmNuisances,
    cfg: &EstimatorConfig,
    diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    check_arms(data)?;
    let n = plan.n_total() as f64;
    let mut arms = [0.0; 2];
    for a in [0u8, 1] {
        let (mean, _) = effective_summary_g(a, summary, data)?;
        let plan_a = arm_plan(data, plan, a, true);
        arms[a as usize] = point_g(&fold_terms(data, &plan_a, &mean, nuis.arm(a)), n, cfg);
    }
    let tau = arms[1] - arms[0];
    let t = treatment(data)?;
    let variance = with_second_moment(summary, |sm| {
        let mut s = 0.0;
        for (k, fold) in plan.folds.iter().enumerate() {
            let (n1, n0) = (&nuis.treated[k], &nuis.control[k]);
            s += fold.external as f64 * sm.quadratic(&difference(&n1.outcome.beta, &n0.outcome.beta));
            for &i in &fold.labeled {
                let p1 = row_dot(data, i, &n1.outcome.beta);
                let p0 = row_dot(data, i, &n0.outcome.beta);
                let y = data.y()[i];
                let term = if t[i] == 1 {
                    p1 - p0 + weight_g(row_dot(data, i, &n1.propensity.beta), cfg) * (y - p1)
                } else {
                    p1 - p0 - weight_g(row_dot(data, i, &n0.propensity.beta), cfg) * (y - p0)
                };
                s += term * term;
            }
        }
        (s / n - tau * tau, sm.source())
    });
    let mut report = build_report(Estimand::TauG, tau, variance, data, diagnostics, cfg)?;
    report.arms = Some(ArmEstimates { treated: arms[1], control: arms[0] });
    Ok(report)
}

pub fn estimate_ate_transport(data: &PrimaryDataset, summary: &ExternalSummary, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    check_arms(data)?;
    data.check_summary(summary)?;
    let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, true)?;
    if let Some(k) = plan.folds.iter().position(|f| f.external == 0) {
        return Err(Error::NoExternalMass { fold: k });
    }
    let mut diagnostics = Diagnostics::default();
    let mut fits = Vec::with_capacity(2);
    for a in [0u8, 1] {
        let plan_a = arm_plan(data, &plan, a, false);
        fits.push(fit_fold_nuisances(data, summary.mean(), &plan_a, cfg, Some(a), &mut diagnostics)?);
    }
    let treated = fits.pop().expect("two arms");
    let control = fits.pop().expect("two arms");
    ate_transport_with(data, summary, &plan, &ArmNuisances { control, treated }, cfg, diagnostics)
}

/// Transport estimate from given nuisances on `plan`.
pub fn ate_transport_with(
    data: &PrimaryDataset,
    summary: &ExternalSummary,
    plan: &FoldPlan,
    nuis: &ArmNuisances,
    cfg: &EstimatorConfig,
    diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    check_arms(data)?;
    let n = plan.n_total() as f64;
    let gammas = plan.gamma_hats();
    let mut arms = [0.0; 2];
    for a in [0u8, 1] {
        let plan_a = arm_plan(data, plan, a, false);
        arms[a as usize] = point_t(&fold_terms(data, &plan_a, summary.mean(), nuis.arm(a)), &gammas, n, cfg)?;
    }
    let tau = arms[1] - arms[0];
    let t = treatment(data)?;
    let variance = with_second_moment(summary, |sm| {
        let mut s = 0.0;
        for (k, fold) in plan.folds.iter().enumerate() {
            let q = 1.0 - gammas[k];
            let (n1, n0) = (&nuis.treated[k], &nuis.control[k]);
            let delta = difference(&n1.outcome.beta, &n0.outcome.beta);
            let mean_delta = dot(summary.mean(), &delta);
            s += fold.external as f64 / (q * q) * (sm.quadratic(&delta) - 2.0 * tau * mean_delta + tau * tau);
            for &i in &fold.labeled {
                let nu = if t[i] == 1 { n1 } else { n0 };
                let r = data.y()[i] - row_dot(data, i, &nu.outcome.beta);
                let w = weight_t(row_dot(data, i, &nu.propensity.beta), cfg);
                s += w * w * r * r / (q * q);
            }
        }
        (s / n, sm.source())
    });
    let mut report = build_report(Estimand::TauT, tau, variance, data, diagnostics, cfg)?;
    report.arms = Some(ArmEstimates { treated: arms[1], control: arms[0] });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn effective_mean_by_hand() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 1.0, 7.0]);
        let data = PrimaryDataset::new(x, vec![0.0, 1.0], Some(vec![0, 1]), 2).unwrap();
        let summary = ExternalSummary::new(2, vec![1.0, 3.0], None, None).unwrap();
        let (mean, count) = effective_summary_g(1, &summary, &data).unwrap();
        assert_eq!(count, 3);
        assert_eq!(mean[0], 1.0);
        assert!((mean[1] - 11.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_opposite_arm_keeps_summary_mean() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 1.0, 7.0]);
        let data = PrimaryDataset::new(x, vec![0.0, 1.0], Some(vec![1, 1]), 3).unwrap();
        let summary = ExternalSummary::new(3, vec![1.0, 0.25], None, None).unwrap();
        let (mean, count) = effective_summary_g(1, &summary, &data).unwrap();
        assert_eq!(count, 3);
        assert_eq!(mean, vec![1.0, 0.25]);
    }

    #[test]
    fn missing_arm_is_an_error() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 1.0, 7.0]);
        let data = PrimaryDataset::new(x, vec![0.0, 1.0], Some(vec![1, 1]), 3).unwrap();
        let summary = ExternalSummary::new(3, vec![1.0, 0.25], None, None).unwrap();
        let cfg = EstimatorConfig::default();
        assert!(matches!(
            estimate_ate_generalize(&data, &summary, &cfg),
            Err(Error::DegenerateArm { arm: 0, .. })
        ));
    }
}
