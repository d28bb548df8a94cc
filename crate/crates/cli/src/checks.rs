//! Self-checks behind `summint verify`: solver certification, gradient
//! checks, closed-form reductions and summary sufficiency on synthetic data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use summint_core::data::make_folds;
use summint_core::link::logit;
use summint_core::mar::fit_nuisances_on;
use summint_core::mcar::estimate_mean_mcar;
use summint_core::optim::{quad_gradient, solve_lasso, solve_tilt, tilt_gradient, QuadProblem, SolverOptions, TiltProblem};
use summint_core::verify::{fd_gradient, kkt_residual, kkt_residual_at, shuffle_equivalence, Problem};
use summint_core::{summarize_external, Estimand, EstimatorConfig, ExternalSummary, PrimaryDataset};

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckResult {
    check(name, false, format!("error: {err}"))
}

fn mix(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
}

fn design(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) })
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    num / den
}

pub fn run_all(seed: u64, instances: usize) -> Vec<CheckResult> {
    vec![
        kkt_at_least_squares(seed),
        kkt_at_lambda_max(seed),
        kkt_of_solver_fits(seed, instances),
        fd_quadratic(seed),
        fd_tilt(seed),
        fd_scalar_identity(),
        full_labeling(seed),
        intercept_only_tilt(),
        shuffles(seed),
        conservative_dominates(seed),
    ]
}

/// The weighted least-squares solution is a zero of the gradient at λ = 0.
fn kkt_at_least_squares(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
    let (n, d) = (120, 6);
    let x = design(n, d, &mut rng);
    let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] - 2.0 * x[(i, 2)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let wx = DMatrix::from_fn(n, d, |i, j| w[i] * x[(i, j)]);
    let lhs = x.transpose() * &wx;
    let rhs = wx.transpose() * DVector::from_column_slice(&y);
    let Some(beta) = lhs.cholesky().map(|c| c.solve(&rhs)) else {
        return check("kkt: least squares", false, "normal equations not positive definite".into());
    };
    let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda: 0.0, penalize_intercept: false };
    let r = kkt_residual_at(beta.as_slice(), &Problem::Quad(p));
    check("kkt: least squares", r <= 1e-10, format!("residual {r:.2e} (limit 1e-10)"))
}

/// Zero is optimal once λ reaches the sup-norm of the gradient at zero.
fn kkt_at_lambda_max(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));
    let (n, d) = (80, 10);
    let x = design(n, d, &mut rng);
    let y: Vec<f64> = (0..n).map(|i| 0.5 + x[(i, 3)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let w = vec![1.0; n];
    let zero = vec![0.0; d];
    let probe = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda: 0.0, penalize_intercept: true };
    let lambda = Problem::Quad(probe).smooth_gradient(&zero).iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let p = QuadProblem { lambda, ..probe };
    let r = kkt_residual_at(&zero, &Problem::Quad(p));
    check("kkt: lambda max", r <= 1e-12, format!("residual {r:.2e} at lambda {lambda:.4} (limit 1e-12)"))
}

/// Every converged lasso and tilt fit on random instances is certified.
fn kkt_of_solver_fits(seed: u64, instances: usize) -> CheckResult {
    let opts = SolverOptions::default();
    let (mut converged, mut certified, mut worst) = (0usize, 0usize, 0.0f64);
    for k in 0..instances as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1000 + k));
        let n = rng.random_range(20..160);
        let d = rng.random_range(2..60);
        let x = design(n, d, &mut rng);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
        let mut tally = |fit: Option<summint_core::optim::PenalizedFit>, problem: Problem<'_>| {
            if let Some(fit) = fit.filter(|f| f.converged) {
                converged += 1;
                let r = kkt_residual(&fit, &problem);
                worst = worst.max(r);
                certified += usize::from(r <= 10.0 * opts.tol);
            }
        };
        for lambda in [0.01, 0.05, 0.3] {
            let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda, penalize_intercept: k % 2 == 0 };
            tally(solve_lasso(&p, &opts).ok(), Problem::Quad(p));
        }
        let ext = rng.random_range(n..4 * n) as f64;
        let total = n as f64 + ext;
        let linear: Vec<f64> =
            (0..d).map(|j| ext / total * if j == 0 { 1.0 } else { rng.random_range(-0.2..0.2) }).collect();
        for lambda in [0.05, 0.1, 0.3] {
            let p = TiltProblem { linear: &linear, x: &x, normalizer: total, lambda, penalize_intercept: false };
            tally(solve_tilt(&p, &opts).ok(), Problem::Tilt(p));
        }
    }
    check(
        "kkt: solver fits",
        converged > 0 && certified == converged,
        format!("{certified}/{converged} converged fits certified, worst residual {worst:.2e}"),
    )
}

fn fd_quadratic(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 3));
    let (n, d) = (60, 7);
    let x = design(n, d, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda: 0.0, penalize_intercept: false };
    let point: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    match fd_gradient(|b| Problem::Quad(p).smooth_loss(b), &point, FD_STEP) {
        Ok(fd) => {
            let err = quad_gradient(&p, &point).iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            check("gradient: quadratic loss", err <= 1e-7, format!("max abs error {err:.2e} (limit 1e-7)"))
        }
        Err(e) => failed("gradient: quadratic loss", e),
    }
}

fn fd_tilt(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 4));
    let (n, d) = (90, 8);
    let x = design(n, d, &mut rng);
    let linear: Vec<f64> = (0..d).map(|j| if j == 0 { 0.7 } else { rng.random_range(-0.1..0.1) }).collect();
    let p = TiltProblem { linear: &linear, x: &x, normalizer: 300.0, lambda: 0.0, penalize_intercept: false };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let point: Vec<f64> = (0..d).map(|_| rng.random_range(-0.6..0.6)).collect();
        match fd_gradient(|a| Problem::Tilt(p).smooth_loss(a), &point, FD_STEP) {
            Ok(fd) => worst = worst.max(relative_error(&tilt_gradient(&p, &point), &fd)),
            Err(e) => return failed("gradient: tilt loss", e),
        }
    }
    check("gradient: tilt loss", worst <= 1e-5, format!("worst relative error {worst:.2e} over 20 points (limit 1e-5)"))
}

/// d/dt (1 + e^{-t}) = -e^{-t}.
fn fd_scalar_identity() -> CheckResult {
    let mut worst = 0.0f64;
    for t in [-5.0f64, 0.0, 5.0] {
        match fd_gradient(|v| 1.0 + (-v[0]).exp(), &[t], FD_STEP) {
            Ok(fd) => worst = worst.max((fd[0] + (-t).exp()).abs() / (-t).exp()),
            Err(e) => return failed("gradient: scalar identity", e),
        }
    }
    check("gradient: scalar identity", worst <= 1e-6, format!("worst relative error {worst:.2e}"))
}

/// Linear outcome, logistic labeling in `x[1]`, optional fair-coin treatment.
fn sample(n: usize, d: usize, shift: f64, treated: bool, seed: u64) -> (PrimaryDataset, Vec<Vec<f64>>, ExternalSummary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut y, mut a, mut ext) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) }).collect();
        let t: u8 = rng.random_range(0..2);
        let effect = if treated { f64::from(t) * (1.0 + x[1]) } else { 0.0 };
        let outcome = 1.0 + 2.0 * x[1] - x[2] + effect + rng.sample::<f64, _>(StandardNormal);
        if rng.random::<f64>() < 1.0 / (1.0 + (0.5 - shift * x[1]).exp()) {
            rows.push(x);
            y.push(outcome);
            a.push(t);
        } else {
            ext.push(x);
        }
    }
    let data = PrimaryDataset::from_rows(&rows, y, treated.then_some(a), ext.len()).expect("synthetic rows are valid");
    let summary = summarize_external(&ext).expect("synthetic external rows are valid");
    (data, ext, summary)
}

/// Without external units the estimate is the sample mean.
fn full_labeling(seed: u64) -> CheckResult {
    let (data, _, _) = sample(200, 6, 0.0, false, mix(seed, 5));
    let run = || -> summint_core::Result<f64> {
        let full = PrimaryDataset::new(data.x().clone(), data.y().to_vec(), None, 0)?;
        let mut mean = vec![0.0; data.dim()];
        mean[0] = 1.0;
        let empty = ExternalSummary::new(0, mean, None, None)?;
        let fit = estimate_mean_mcar(&full, &empty, &EstimatorConfig::with_seed(seed))?;
        let ybar = full.y().iter().sum::<f64>() / full.n_labeled() as f64;
        Ok((fit.report.point - ybar).abs())
    };
    match run() {
        Ok(err) => check("reduction: full labeling", err <= 1e-12, format!("distance to sample mean {err:.2e}")),
        Err(e) => failed("reduction: full labeling", e),
    }
}

/// With only an intercept the tilt solution is the logit of the labeled share.
fn intercept_only_tilt() -> CheckResult {
    let mut worst = 0.0f64;
    for (n_lab, n_ext) in [(10usize, 90usize), (200, 800), (500, 500), (3, 997), (700, 300)] {
        let x = DMatrix::from_element(n_lab, 1, 1.0);
        let total = (n_lab + n_ext) as f64;
        let linear = [n_ext as f64 / total];
        let p = TiltProblem { linear: &linear, x: &x, normalizer: total, lambda: 0.1, penalize_intercept: false };
        match solve_tilt(&p, &SolverOptions::default()) {
            Ok(fit) => worst = worst.max((fit.beta[0] - logit(n_lab as f64 / total)).abs()),
            Err(e) => return failed("reduction: intercept-only tilt", e),
        }
    }
    check("reduction: intercept-only tilt", worst <= 1e-8, format!("worst deviation from logit {worst:.2e}"))
}

/// Replacing external rows by others with the same summary changes nothing.
fn shuffles(seed: u64) -> CheckResult {
    let cfg = EstimatorConfig::with_seed(seed);
    let (single, single_rows, _) = sample(600, 6, 0.6, false, mix(seed, 6));
    let (effect, effect_rows, _) = sample(800, 6, 0.6, true, mix(seed, 7));
    let mut total = 0;
    let mut bad = Vec::new();
    for (data, rows, estimands) in [
        (&single, &single_rows, vec![Estimand::MeanMcar, Estimand::ThetaG, Estimand::ThetaT]),
        (&effect, &effect_rows, vec![Estimand::TauG, Estimand::TauT]),
    ] {
        for e in estimands {
            match shuffle_equivalence(data, rows, e, &cfg, mix(seed, 8)) {
                Ok(out) => {
                    total += out.checks.len();
                    bad.extend(out.checks.iter().filter(|c| !c.passed).map(|c| format!("{} {}", e.as_str(), c.name)));
                }
                Err(err) => bad.push(format!("{}: {err}", e.as_str())),
            }
        }
    }
    let detail = if bad.is_empty() { format!("{total} replacements bit-identical") } else { bad.join(", ") };
    check("sufficiency: row replacement", bad.is_empty(), detail)
}

/// Variances built from the gram diagonal bound those built from the full gram.
fn conservative_dominates(seed: u64) -> CheckResult {
    let mut pairs = 0;
    let mut bad = Vec::new();
    for k in 0..10u64 {
        let (data, _, summary) = sample(400, 5, 0.6, false, mix(seed, 100 + k));
        let cfg = EstimatorConfig::with_seed(mix(seed, k));
        let run = || -> summint_core::Result<[(f64, f64); 2]> {
            let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, true)?;
            let fit = fit_nuisances_on(&data, &summary, plan, &cfg)?;
            let g = fit.variance_g(&data, &summary, &cfg).ok_or(summint_core::Error::VarianceUnavailable)?.0;
            let t = fit.variance_t(&data, &summary, &cfg)?.ok_or(summint_core::Error::VarianceUnavailable)?.0;
            Ok([
                (g, fit.conservative_variance_g(&data, &summary, &cfg)?),
                (t, fit.conservative_variance_t(&data, &summary, &cfg)?),
            ])
        };
        match run() {
            Ok(found) => {
                for (exact, bound) in found {
                    pairs += 1;
                    if bound < exact {
                        bad.push(format!("instance {k}: {bound:.4} < {exact:.4}"));
                    }
                }
            }
            Err(e) => bad.push(format!("instance {k}: {e}")),
        }
    }
    let detail = if bad.is_empty() { format!("{pairs} pairs ordered") } else { bad.join(", ") };
    check("variance: conservative bound", bad.is_empty(), detail)
}
