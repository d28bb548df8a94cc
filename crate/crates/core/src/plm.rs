//! Mean estimation with a partially linear outcome model `xᵀβ + f(z)`, where
//! the low-dimensional block `z` is observed individually for every unit,
//! external ones included.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EstimatorConfig};
use crate::data::{make_folds, ExternalSummary, FoldPlan, PrimaryDataset};
use crate::error::{Error, Result};
use crate::mcar::{diagnostic, gram_quadratic, row_dot, ROLE_PLM};
use crate::optim::{
    default_grid, dot, select_rows, solve_lasso_warm, CvFamily, LambdaRule, PenalizedFit, QuadProblem, QuadSpec,
    SolverOptions,
};
use crate::report::{floor_variance, Diagnostics, EstimateReport, Estimand, VarianceSource};
use crate::spline::AdditiveSpline;

/// Largest supported `z` dimension.
pub const MAX_Z_DIM: usize = 5;
/// Fewest labeled rows a partially linear fit accepts.
pub const MIN_ROWS: usize = 20;

/// Primary data plus the individually observed `z` block of all units.
#[derive(Debug, Clone, PartialEq)]
pub struct PlmDataset {
    base: PrimaryDataset,
    z_labeled: Vec<Vec<f64>>,
    z_external: Vec<Vec<f64>>,
}

impl PlmDataset {
    pub fn new(base: PrimaryDataset, z_labeled: Vec<Vec<f64>>, z_external: Vec<Vec<f64>>) -> Result<Self> {
        if z_labeled.len() != base.n_labeled() {
            return Err(Error::Dimension { expected: base.n_labeled(), found: z_labeled.len() });
        }
        if z_external.len() != base.n_external() {
            return Err(Error::invalid(format!(
                "z is required for every external unit: expected {} rows, found {}",
                base.n_external(),
                z_external.len()
            )));
        }
        let r = z_labeled.first().or(z_external.first()).map_or(0, Vec::len);
        if r == 0 {
            return Err(Error::invalid("z block is empty"));
        }
        if r > MAX_Z_DIM {
            return Err(Error::invalid(format!("z dimension {r} exceeds {MAX_Z_DIM}")));
        }
        for row in z_labeled.iter().chain(&z_external) {
            if row.len() != r {
                return Err(Error::Dimension { expected: r, found: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("z".into()));
            }
        }
        Ok(PlmDataset { base, z_labeled, z_external })
    }

    pub fn base(&self) -> &PrimaryDataset {
        &self.base
    }

    pub fn z_labeled(&self) -> &[Vec<f64>] {
        &self.z_labeled
    }

    pub fn z_external(&self) -> &[Vec<f64>] {
        &self.z_external
    }

    pub fn z_dim(&self) -> usize {
        self.z_labeled.first().or(self.z_external.first()).map_or(0, Vec::len)
    }
}

/// Settings specific to the smooth part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmOptions {
    /// Ridge penalty on spline coefficients; chosen by CV when `None`.
    pub eta: Option<f64>,
    pub interior_knots: usize,
    pub max_backfit: usize,
    /// Relative objective decrease that ends backfitting.
    pub backfit_tol: f64,
    /// Points per axis of the joint (λ, η) CV grid.
    pub grid_points: usize,
}

impl Default for PlmOptions {
    fn default() -> Self {
        PlmOptions { eta: None, interior_knots: 10, max_backfit: 200, backfit_tol: 1e-8, grid_points: 5 }
    }
}

/// One fitted partially linear outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmNuisance {
    pub linear: PenalizedFit,
    pub smooth: AdditiveSpline,
    pub eta: f64,
    pub backfit_iterations: usize,
    pub converged: bool,
}

impl PlmNuisance {
    pub fn predict(&self, x: &[f64], z: &[f64]) -> f64 {
        dot(x, &self.linear.beta) + self.smooth.eval(z)
    }
}

/// Ridge solver for the spline block: `(BᵀB/n + ηI)⁻¹ Bᵀr/n`.
struct Ridge {
    basis: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Ridge {
    fn new(basis: DMatrix<f64>, eta: f64) -> Self {
        let n = basis.nrows().max(1) as f64;
        let m = basis.ncols();
        let chol = if m == 0 {
            None
        } else {
            let mut a = basis.tr_mul(&basis) / n;
            for j in 0..m {
                a[(j, j)] += eta.max(1e-12);
            }
            nalgebra::Cholesky::new(a)
        };
        Ridge { basis, chol }
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        match &self.chol {
            None => Vec::new(),
            Some(c) => {
                let n = self.basis.nrows().max(1) as f64;
                let rhs = self.basis.tr_mul(&DVector::from_column_slice(r)) / n;
                c.solve(&rhs).iter().copied().collect()
            }
        }
    }

    fn fitted(&self, coef: &[f64]) -> Vec<f64> {
        if coef.is_empty() {
            return vec![0.0; self.basis.nrows()];
        }
        (&self.basis * DVector::from_column_slice(coef)).iter().copied().collect()
    }
}

/// Backfitting for `min Σ(y − xᵀβ − f(z))²/n + λ‖β‖₁ + η‖c‖²`, alternating a
/// Lasso step in β and a ridge step in the spline coefficients `c`.
#[allow(clippy::too_many_arguments)]
pub fn fit_plm(
    x: &DMatrix<f64>,
    z: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    eta: f64,
    opts: &PlmOptions,
    solver: &SolverOptions,
    penalize_intercept: bool,
) -> Result<PlmNuisance> {
    let n = x.nrows();
    if n < MIN_ROWS {
        return Err(Error::invalid(format!("partially linear fit needs at least {MIN_ROWS} labeled rows, got {n}")));
    }
    if z.len() != n || y.len() != n {
        return Err(Error::Dimension { expected: n, found: z.len().min(y.len()) });
    }
    let mut smooth = AdditiveSpline::fit_bases(z, opts.interior_knots);
    let m = smooth.n_coef();
    let basis = DMatrix::from_fn(n, m, |_, _| 0.0);
    let mut basis = basis;
    for (i, zi) in z.iter().enumerate() {
        for (j, v) in smooth.design_row(zi).into_iter().enumerate() {
            basis[(i, j)] = v;
        }
    }
    let ridge = Ridge::new(basis, eta);
    let weights = vec![1.0; n];
    let nf = n as f64;

    let mut coef = vec![0.0; m];
    let mut f_fit = vec![0.0; n];
    let mut beta: Option<PenalizedFit> = None;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_backfit {
        iterations += 1;
        let target: Vec<f64> = y.iter().zip(&f_fit).map(|(a, b)| a - b).collect();
        let p = QuadProblem { x, y: &target, weights: &weights, normalizer: nf, lambda, penalize_intercept };
        let fit = solve_lasso_warm(&p, solver, beta.as_ref().map(|b| b.beta.as_slice()))?;
        let lin: Vec<f64> = (0..n).map(|i| row_dot_matrix(x, i, &fit.beta)).collect();
        let partial: Vec<f64> = y.iter().zip(&lin).map(|(a, b)| a - b).collect();
        coef = ridge.solve(&partial);
        f_fit = ridge.fitted(&coef);
        let rss: f64 = (0..n).map(|i| (y[i] - lin[i] - f_fit[i]).powi(2)).sum::<f64>() / nf;
        let l1: f64 = fit.beta.iter().skip(usize::from(!penalize_intercept)).map(|b| b.abs()).sum();
        let objective = rss + lambda * l1 + eta * coef.iter().map(|c| c * c).sum::<f64>();
        beta = Some(fit);
        if m == 0 || prev - objective <= opts.backfit_tol * objective.abs().max(1e-300) {
            converged = true;
            break;
        }
        prev = objective;
    }
    smooth.coef = coef;
    Ok(PlmNuisance { linear: beta.expect("at least one pass"), smooth, eta, backfit_iterations: iterations, converged })
}

fn row_dot_matrix(x: &DMatrix<f64>, i: usize, beta: &[f64]) -> f64 {
    beta.iter().enumerate().map(|(j, b)| x[(i, j)] * b).sum()
}

/// Penalty pair chosen for one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyChoice {
    pub lambda: f64,
    pub eta: f64,
}

fn eta_grid(z: &[Vec<f64>], opts: &PlmOptions) -> Vec<f64> {
    if let Some(e) = opts.eta {
        return vec![e];
    }
    let f = AdditiveSpline::fit_bases(z, opts.interior_knots);
    let m = f.n_coef();
    if m == 0 {
        return vec![1.0];
    }
    let trace: f64 = z.iter().map(|zi| f.design_row(zi).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / z.len() as f64;
    let scale = trace / m as f64;
    let k = opts.grid_points.max(1);
    (0..k).map(|i| scale * 10f64.powi(-(i as i32))).collect()
}

/// Joint CV over (λ, η) on the rows given; Fixed/Theory λ rules collapse the λ axis.
#[allow(clippy::too_many_arguments)]
fn choose_penalties(
    x: &DMatrix<f64>,
    z: &[Vec<f64>],
    y: &[f64],
    rule: &LambdaRule,
    opts: &PlmOptions,
    solver: &SolverOptions,
    penalize_intercept: bool,
    seed: u64,
) -> Result<PenaltyChoice> {
    let n = x.nrows();
    let etas = eta_grid(z, opts);
    let w = vec![1.0; n];
    let (lambdas, folds) = match rule {
        LambdaRule::Fixed(l) => (vec![*l], 5),
        LambdaRule::Theory(c) => (vec![c * ((x.ncols().max(2) as f64).ln() / n as f64).sqrt()], 5),
        LambdaRule::Cv { folds, grid } => {
            let g = match grid {
                Some(g) => g.clone(),
                None => {
                    let fam = CvFamily::Quad(QuadSpec { x, y, weights: &w, normalizer: n as f64, penalize_intercept });
                    default_grid(&fam, opts.grid_points.max(2), fam.default_ratio())
                }
            };
            (g, *folds)
        }
    };
    if lambdas.len() == 1 && etas.len() == 1 {
        return Ok(PenaltyChoice { lambda: lambdas[0], eta: etas[0] });
    }
    let k = folds.min(n);
    if k < 2 {
        return Err(Error::CrossValidation);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut loss = vec![vec![0.0; lambdas.len()]; etas.len()];
    for f in 0..k {
        let (lo, hi) = (f * n / k, (f + 1) * n / k);
        let mut val: Vec<usize> = perm[lo..hi].to_vec();
        val.sort_unstable();
        let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        train.sort_unstable();
        let xt = select_rows(x, &train);
        let zt: Vec<Vec<f64>> = train.iter().map(|&i| z[i].clone()).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        for (e, &eta) in etas.iter().enumerate() {
            let mut failed = false;
            for (l, &lambda) in lambdas.iter().enumerate() {
                if failed {
                    loss[e][l] = f64::INFINITY;
                    continue;
                }
                match fit_plm(&xt, &zt, &yt, lambda, eta, opts, solver, penalize_intercept) {
                    Ok(fit) => {
                        let sse: f64 = val
                            .iter()
                            .map(|&i| {
                                let pred = row_dot_matrix(x, i, &fit.linear.beta) + fit.smooth.eval(&z[i]);
                                (y[i] - pred).powi(2)
                            })
                            .sum();
                        loss[e][l] += sse / val.len().max(1) as f64;
                    }
                    Err(_) => {
                        failed = true;
                        loss[e][l] = f64::INFINITY;
                    }
                }
            }
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for (e, row) in loss.iter().enumerate() {
        for (l, &v) in row.iter().enumerate() {
            if v.is_finite() && best.is_none_or(|(be, bl)| v < loss[be][bl]) {
                best = Some((e, l));
            }
        }
    }
    let (e, l) = best.ok_or(Error::CrossValidation)?;
    Ok(PenaltyChoice { lambda: lambdas[l], eta: etas[e] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmFit {
    pub plan: FoldPlan,
    pub fold_fits: Vec<PlmNuisance>,
    pub report: EstimateReport,
}

pub fn estimate_mean_plm(
    data: &PlmDataset,
    summary: &ExternalSummary,
    cfg: &EstimatorConfig,
    opts: &PlmOptions,
) -> Result<PlmFit> {
    cfg.validate()?;
    let base = data.base();
    base.check_summary(summary)?;
    let plan = make_folds(base.n_labeled(), base.n_external(), cfg.folds, cfg.seed, false)?;
    let mut diagnostics = Diagnostics::default();
    let mut fits = Vec::with_capacity(plan.k);
    for (k, comp) in plan.complements.iter().enumerate() {
        let rows = &comp.all.labeled;
        let x = select_rows(base.x(), rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|&i| data.z_labeled[i].clone()).collect();
        let y: Vec<f64> = rows.iter().map(|&i| base.y()[i]).collect();
        let seed = derive_seed(cfg.seed, &[k as u64, ROLE_PLM]);
        let choice = choose_penalties(&x, &z, &y, &cfg.lambda, opts, &cfg.solver, cfg.penalize_intercept, seed)?;
        let fit = fit_plm(&x, &z, &y, choice.lambda, choice.eta, opts, &cfg.solver, cfg.penalize_intercept)?;
        let mut d = diagnostic(k, "outcome_plm", None, &fit.linear);
        d.converged &= fit.converged;
        diagnostics.nuisances.push(d);
        fits.push(fit);
    }
    if let Some(w) = independence_warning(data) {
        diagnostics.warnings.push(w);
    }
    estimate_mean_plm_with_fits(data, summary, plan, fits, cfg, diagnostics)
}

/// Two-sample z statistics of each `z` coordinate between labeled and
/// external units; a warning when any exceeds 3 in absolute value.
pub fn independence_warning(data: &PlmDataset) -> Option<String> {
    let (a, b) = (&data.z_labeled, &data.z_external);
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let stats = |rows: &[Vec<f64>], j: usize| {
        let n = rows.len() as f64;
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v / n)
    };
    let flagged: Vec<String> = (0..data.z_dim())
        .filter_map(|j| {
            let (ma, va) = stats(a, j);
            let (mb, vb) = stats(b, j);
            let se = (va + vb).sqrt();
            let t = if se > 0.0 { (ma - mb) / se } else { 0.0 };
            (t.abs() > 3.0).then(|| format!("z{} (t = {t:.2})", j + 1))
        })
        .collect();
    (!flagged.is_empty()).then(|| {
        format!("labeling may depend on z: mean difference between labeled and external units for {}", flagged.join(", "))
    })
}

/// Assemble the estimate from given fold fits.
pub fn estimate_mean_plm_with_fits(
    data: &PlmDataset,
    summary: &ExternalSummary,
    plan: FoldPlan,
    fold_fits: Vec<PlmNuisance>,
    cfg: &EstimatorConfig,
    mut diagnostics: Diagnostics,
) -> Result<PlmFit> {
    let base = data.base();
    base.check_summary(summary)?;
    let n = plan.n_total() as f64;
    let gammas = plan.gamma_hats();
    let mut total = 0.0;
    let mut labeled_sq = 0.0;
    let mut primary_only = 0.0;
    let mut external_sq = 0.0;
    for (k, fold) in plan.folds.iter().enumerate() {
        let fit = &fold_fits[k];
        let g = gammas[k];
        for &i in &fold.labeled {
            let pred = row_dot(base, i, &fit.linear.beta) + fit.smooth.eval(&data.z_labeled[i]);
            let r = base.y()[i] - pred;
            total += pred + r / g;
            labeled_sq += (pred + r / g).powi(2);
            primary_only += pred * pred / g + r * r / (g * g);
        }
        let mean_fit = dot(summary.mean(), &fit.linear.beta);
        for &e in &plan.external_members[k] {
            let f = fit.smooth.eval(&data.z_external[e]);
            total += mean_fit + f;
            external_sq += f * f + 2.0 * mean_fit * f;
        }
    }
    let point = total / n;
    let (raw, source) = match summary.gram() {
        Some(gram) => {
            let quad: f64 = plan
                .folds
                .iter()
                .zip(&fold_fits)
                .map(|(fold, fit)| fold.external as f64 * gram_quadratic(gram, &fit.linear.beta))
                .sum();
            ((labeled_sq + quad + external_sq) / n - point * point, VarianceSource::ExternalGram)
        }
        None => (primary_only / n - point * point, VarianceSource::PrimaryOnly),
    };
    diagnostics.variance_source = Some(source);
    let variance = floor_variance(raw, &mut diagnostics.warnings);
    let report =
        EstimateReport::build(Estimand::MeanPlm, point, Some(variance), cfg.level, base.n_total(), base.n_labeled(), diagnostics)?;
    Ok(PlmFit { plan, fold_fits, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::solve_lasso;
    use rand::{Rng, SeedableRng};

    fn sample(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] + z[i][0].sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        (x, z, y)
    }

    #[test]
    fn huge_eta_reduces_to_lasso() {
        let (x, z, y) = sample(120, 6, 1);
        let opts = PlmOptions::default();
        let solver = SolverOptions::default();
        let fit = fit_plm(&x, &z, &y, 0.05, 1e12, &opts, &solver, false).unwrap();
        let w = vec![1.0; 120];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 120.0, lambda: 0.05, penalize_intercept: false };
        let lasso = solve_lasso(&p, &solver).unwrap();
        for (a, b) in fit.linear.beta.iter().zip(&lasso.beta) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn smooth_recovers_sine() {
        let (x, z, y) = sample(400, 4, 2);
        let fit = fit_plm(&x, &z, &y, 0.001, 1e-4, &PlmOptions::default(), &SolverOptions::default(), false).unwrap();
        assert!(fit.converged);
        let offset = fit.linear.beta[0];
        let ise: f64 = (0..=400)
            .map(|i| {
                let t = -2.0 + 4.0 * i as f64 / 400.0;
                (fit.smooth.eval(&[t]) + offset - t.sin()).powi(2)
            })
            .sum::<f64>()
            / 401.0;
        assert!(ise < 0.01, "ise {ise}");
    }

    #[test]
    fn rejects_missing_external_z() {
        let (x, z, y) = sample(30, 3, 3);
        let base = PrimaryDataset::new(x, y, None, 10).unwrap();
        assert!(PlmDataset::new(base, z, Vec::new()).is_err());
    }
}
