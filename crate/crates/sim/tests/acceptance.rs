//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line straight to
//! stdout (bypassing the test harness capture) and then asserts.
//!
//! The Monte Carlo criteria are expensive; run with
//! `cargo test -p summint-sim --test acceptance -- --nocapture --test-threads 1`
//! to watch them one at a time.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use summint_core::data::make_folds;
use summint_core::link::logit;
use summint_core::mar::fit_nuisances_on;
use summint_core::mcar::{estimate_mean_mcar, required_support};
use summint_core::optim::{
    quad_gradient, solve_lasso, solve_tilt, tilt_gradient, LambdaRule, QuadProblem, SolverOptions, TiltProblem,
};
use summint_core::verify::{fd_gradient, kkt_residual, shuffle_equivalence, Problem};
use summint_core::{summarize_external, Estimand, EstimatorConfig, ExternalSummary, PrimaryDataset};
use summint_sim::metrics::EstimatorSummary;
use summint_sim::{run_replications, Dgp, Scenario, SimResult};

fn report(criterion: u32, passed: bool, detail: &str) -> String {
    let line = format!("acceptance criterion {criterion}: {} | {detail}", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    line
}

fn run(scenario: Scenario) -> SimResult {
    run_replications(&scenario).unwrap_or_else(|e| panic!("scenario {} failed: {e}", scenario.dgp))
}

fn summary(result: &SimResult, e: Estimand) -> &EstimatorSummary {
    result.summary(e).expect("estimator was requested")
}

fn describe(s: &EstimatorSummary) -> String {
    format!(
        "{} truth {:.4} bias {:.4} rmse_med {:.4} length {:.4} coverage {:.3} ({} ok, {} failed)",
        s.estimator.as_str(),
        s.truth,
        s.bias,
        s.rmse_med,
        s.length.unwrap_or(f64::NAN),
        s.coverage.unwrap_or(f64::NAN),
        s.succeeded,
        s.failed
    )
}

fn within(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|v| (lo..=hi).contains(&v))
}

#[test]
fn criterion_1_process_a_small_labeled_fraction() {
    let r = run(Scenario::new(Dgp::A, 5000, 201, 6, 2, 0.2, 200, vec![Estimand::TauG], 1));
    let s = summary(&r, Estimand::TauG);
    let ok = s.bias.abs() <= 0.05
        && (0.05..=0.20).contains(&s.rmse_med)
        && within(s.length, 0.40, 0.70)
        && within(s.coverage, 0.85, 0.97);
    let line = report(1, ok, &describe(s));
    assert!(ok, "{line}");
}

#[test]
fn criterion_2_process_a_half_labeled() {
    let r = run(Scenario::new(Dgp::A, 10_000, 201, 6, 2, 0.5, 200, vec![Estimand::TauG], 2));
    let s = summary(&r, Estimand::TauG);
    let ok = s.bias.abs() <= 0.03 && within(s.coverage, 0.88, 0.98);
    let line = report(2, ok, &describe(s));
    assert!(ok, "{line}");
}

#[test]
fn criterion_3_process_b() {
    let r = run(Scenario::new(Dgp::B, 3000, 201, 6, 2, 0.5, 200, vec![Estimand::TauG], 3));
    let s = summary(&r, Estimand::TauG);
    let ok = s.bias.abs() <= 0.15 && within(s.coverage, 0.88, 0.99);
    let line = report(3, ok, &describe(s));
    assert!(ok, "{line}");
}

#[test]
fn criterion_4_double_robustness() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (dgp, seed) in [(Dgp::MarWrongOutcome, 41), (Dgp::MarWrongPropensity, 42)] {
        let r = run(Scenario::new(dgp, 5000, 201, 6, 2, 0.2, 200, vec![Estimand::ThetaG, Estimand::ThetaT], seed));
        for e in [Estimand::ThetaG, Estimand::ThetaT] {
            let s = summary(&r, e);
            ok &= s.bias.abs() <= 0.05 && within(s.coverage, 0.85, 0.97);
            parts.push(format!("{dgp}: {}", describe(s)));
        }
    }
    let line = report(4, ok, &parts.join("; "));
    assert!(ok, "{line}");
}

#[test]
fn criterion_5_error_rate_in_effective_sample_size() {
    let small = run(Scenario::new(Dgp::McarLinear, 2000, 100, 5, 5, 0.3, 500, vec![Estimand::MeanMcar], 51));
    let large = run(Scenario::new(Dgp::McarLinear, 8000, 100, 5, 5, 0.3, 500, vec![Estimand::MeanMcar], 52));
    let (a, b) = (summary(&small, Estimand::MeanMcar), summary(&large, Estimand::MeanMcar));
    let ratio = a.rmse_med / b.rmse_med;
    let ok = (1.6..=2.6).contains(&ratio);
    let line = report(5, ok, &format!("median |error| {:.5} at n=2000, {:.5} at n=8000, ratio {ratio:.3}", a.rmse_med, b.rmse_med));
    assert!(ok, "{line}");
}

/// Population variances of `Y` and `Xᵀβ` for the linear MCAR process, by
/// direct simulation (independent of the crate's samplers).
fn linear_population_variances(s_beta: usize, draws: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a6e);
    let (mut sl, mut sl2, mut sy, mut sy2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let mut lin = 1.0;
        for _ in 0..s_beta {
            let v = loop {
                let v: f64 = rng.sample(StandardNormal);
                if v.abs() <= 2.0 {
                    break v;
                }
            };
            lin += v;
        }
        let noise: f64 = rng.sample(StandardNormal);
        let y = lin + noise;
        sl += lin;
        sl2 += lin * lin;
        sy += y;
        sy2 += y * y;
    }
    let n = draws as f64;
    (sy2 / n - (sy / n).powi(2), sl2 / n - (sl / n).powi(2))
}

#[test]
fn criterion_6_variance_formula() {
    let gamma = 0.3;
    let (var_y, var_lin) = linear_population_variances(5, 10_000_000);
    let target = var_y / gamma + (1.0 - 1.0 / gamma) * var_lin;
    let r = run(Scenario::new(Dgp::McarLinear, 20_000, 100, 5, 5, gamma, 20, vec![Estimand::MeanMcar], 61));
    let s = summary(&r, Estimand::MeanMcar);
    let estimate = s.mean_variance_estimate.unwrap_or(f64::NAN);
    let rel = (estimate / target - 1.0).abs();
    let ok = rel <= 0.10;
    let line = report(6, ok, &format!("mean variance estimate {estimate:.4} over 20 reps, population {target:.4}, relative error {rel:.4}"));
    assert!(ok, "{line}");
}

fn random_design(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) })
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    num / den
}

#[test]
fn criterion_7_solver_certification() {
    let opts = SolverOptions::default();
    let (mut converged, mut certified, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..160);
        let d = rng.random_range(2..60);
        let x = random_design(n, d, &mut rng);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
        for lambda in [0.01, 0.05, 0.3] {
            let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda, penalize_intercept: seed % 2 == 0 };
            if let Ok(fit) = solve_lasso(&p, &opts) {
                if fit.converged {
                    converged += 1;
                    let r = kkt_residual(&fit, &Problem::Quad(p));
                    worst = worst.max(r);
                    certified += usize::from(r <= 10.0 * opts.tol);
                }
            }
        }
        let ext = rng.random_range(n..4 * n) as f64;
        let total = n as f64 + ext;
        let linear: Vec<f64> =
            (0..d).map(|j| ext / total * if j == 0 { 1.0 } else { rng.random_range(-0.2..0.2) }).collect();
        for lambda in [0.05, 0.1, 0.3] {
            let p = TiltProblem { linear: &linear, x: &x, normalizer: total, lambda, penalize_intercept: false };
            if let Ok(fit) = solve_tilt(&p, &opts) {
                if fit.converged {
                    converged += 1;
                    let r = kkt_residual(&fit, &Problem::Tilt(p));
                    worst = worst.max(r);
                    certified += usize::from(r <= 10.0 * opts.tol);
                }
            }
        }
    }

    // Finite differences at 20 random points per loss.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = random_design(90, 8, &mut rng);
    let y: Vec<f64> = (0..90).map(|i| x[(i, 2)] - 0.5 * x[(i, 3)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let w: Vec<f64> = (0..90).map(|_| rng.random_range(0.5..2.0)).collect();
    let quad = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 90.0, lambda: 0.0, penalize_intercept: false };
    let linear: Vec<f64> = (0..8).map(|j| if j == 0 { 0.7 } else { rng.random_range(-0.1..0.1) }).collect();
    let tilt = TiltProblem { linear: &linear, x: &x, normalizer: 300.0, lambda: 0.0, penalize_intercept: false };
    let mut fd_worst = 0.0f64;
    for _ in 0..20 {
        let point: Vec<f64> = (0..8).map(|_| rng.random_range(-0.6..0.6)).collect();
        let fd = fd_gradient(|b| Problem::Quad(quad).smooth_loss(b), &point, 1e-6).unwrap();
        fd_worst = fd_worst.max(relative_error(&quad_gradient(&quad, &point), &fd));
        let fd = fd_gradient(|a| Problem::Tilt(tilt).smooth_loss(a), &point, 1e-6).unwrap();
        fd_worst = fd_worst.max(relative_error(&tilt_gradient(&tilt, &point), &fd));
    }

    let ok = converged > 0 && certified == converged && fd_worst <= 1e-5;
    let line = report(
        7,
        ok,
        &format!("{certified}/{converged} converged fits certified (worst KKT {worst:.2e}); worst gradient relative error {fd_worst:.2e}"),
    );
    assert!(ok, "{line}");
}

/// Linear outcome with logistic labeling in `x[1]`; optional fair-coin treatment.
fn linear_sample(n: usize, d: usize, shift: f64, treated: bool, seed: u64) -> (PrimaryDataset, Vec<Vec<f64>>, ExternalSummary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut y, mut a, mut ext) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) }).collect();
        let t: u8 = rng.random_range(0..2);
        let outcome = 1.0 + 2.0 * x[1] - x[2] + if treated { f64::from(t) * (1.0 + x[1]) } else { 0.0 }
            + rng.sample::<f64, _>(StandardNormal);
        let p = 1.0 / (1.0 + (0.5 - shift * x[1]).exp());
        if rng.random::<f64>() < p {
            rows.push(x);
            y.push(outcome);
            a.push(t);
        } else {
            ext.push(x);
        }
    }
    let data = PrimaryDataset::from_rows(&rows, y, treated.then_some(a), ext.len()).unwrap();
    let summary = summarize_external(&ext).unwrap();
    (data, ext, summary)
}

#[test]
fn criterion_8_exact_reductions() {
    let mut failures: Vec<String> = Vec::new();

    // Full labeling returns the sample mean.
    let mut worst_full = 0.0f64;
    for seed in 0..20u64 {
        let (data, _, _) = linear_sample(200, 6, 0.0, false, seed);
        let full = PrimaryDataset::new(data.x().clone(), data.y().to_vec(), None, 0).unwrap();
        let summary = ExternalSummary::new(0, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], None, None).unwrap();
        let cfg = EstimatorConfig { seed, ..Default::default() };
        let fit = estimate_mean_mcar(&full, &summary, &cfg).unwrap();
        let ybar = full.y().iter().sum::<f64>() / full.n_labeled() as f64;
        worst_full = worst_full.max((fit.report.point - ybar).abs());
    }
    if worst_full > 1e-12 {
        failures.push(format!("full labeling off by {worst_full:e}"));
    }

    // Intercept-only tilt: the propensity intercept is logit of the labeled share.
    let mut worst_logit = 0.0f64;
    for (n_lab, n_ext) in [(10usize, 90usize), (200, 800), (500, 500), (3, 997), (700, 300)] {
        let x = DMatrix::from_element(n_lab, 1, 1.0);
        let total = (n_lab + n_ext) as f64;
        let linear = [n_ext as f64 / total];
        let p = TiltProblem { linear: &linear, x: &x, normalizer: total, lambda: 0.1, penalize_intercept: false };
        let fit = solve_tilt(&p, &SolverOptions::default()).unwrap();
        worst_logit = worst_logit.max((fit.beta[0] - logit(n_lab as f64 / total)).abs());
    }
    if worst_logit > 1e-8 {
        failures.push(format!("intercept-only tilt off by {worst_logit:e}"));
    }

    // Restricting the summary mean to the fitted supports changes nothing.
    let mut worst_support = 0.0f64;
    for seed in 0..10u64 {
        let (data, _, summary) = linear_sample(1500, 30, 0.0, false, 100 + seed);
        let cfg = EstimatorConfig { seed, ..Default::default() };
        let fit = estimate_mean_mcar(&data, &summary, &cfg).unwrap();
        let again = estimate_mean_mcar(&data, &summary.restrict_mean(&required_support(&fit)), &cfg).unwrap();
        worst_support = worst_support.max((fit.report.point - again.report.point).abs());
    }
    if worst_support > 1e-15 {
        failures.push(format!("support restriction off by {worst_support:e}"));
    }

    // Shuffled external rows with identical summaries give bit-identical estimates.
    let cfg = EstimatorConfig { lambda: LambdaRule::Cv { folds: 5, grid: None }, seed: 3, ..Default::default() };
    let (mcar, mcar_rows, _) = linear_sample(1200, 10, 0.0, false, 7);
    let (mar, mar_rows, _) = linear_sample(1500, 10, 0.8, true, 8);
    let mut shuffles = 0;
    for (data, rows, estimands) in [
        (&mcar, &mcar_rows, vec![Estimand::MeanMcar, Estimand::ThetaG, Estimand::ThetaT]),
        (&mar, &mar_rows, vec![Estimand::TauG, Estimand::TauT]),
    ] {
        for e in estimands {
            let out = shuffle_equivalence(data, rows, e, &cfg, 9).unwrap();
            shuffles += out.checks.len();
            if !out.passed() {
                failures.push(format!("shuffle check failed for {}: {:?}", e.as_str(), out.checks));
            }
        }
    }

    // Conservative (diagonal) variances dominate exact ones.
    let mut pairs = 0;
    for seed in 0..50u64 {
        let (data, _, summary) = linear_sample(400, 5, 0.6, false, 200 + seed);
        let cfg = EstimatorConfig { seed, ..Default::default() };
        let plan = make_folds(data.n_labeled(), data.n_external(), cfg.folds, cfg.seed, true).unwrap();
        let Ok(fit) = fit_nuisances_on(&data, &summary, plan, &cfg) else {
            failures.push(format!("nuisance fit failed for seed {seed}"));
            continue;
        };
        let (g, _) = fit.variance_g(&data, &summary, &cfg).unwrap();
        let (t, _) = fit.variance_t(&data, &summary, &cfg).unwrap().unwrap();
        for (exact, bound) in [
            (g, fit.conservative_variance_g(&data, &summary, &cfg).unwrap()),
            (t, fit.conservative_variance_t(&data, &summary, &cfg).unwrap()),
        ] {
            pairs += 1;
            if bound < exact {
                failures.push(format!("seed {seed}: conservative {bound} below exact {exact}"));
            }
        }
    }

    let ok = failures.is_empty();
    let detail = if ok {
        format!(
            "full labeling {worst_full:.1e}, intercept-only tilt {worst_logit:.1e}, support restriction {worst_support:.1e}, {shuffles} shuffle checks bit-exact, {pairs} conservative pairs"
        )
    } else {
        failures.join("; ")
    };
    let line = report(8, ok, &detail);
    assert!(ok, "{line}");
}

#[test]
fn criterion_9_partially_linear_efficiency() {
    let r = run(Scenario::new(
        Dgp::PlmNonlinear,
        4000,
        50,
        5,
        5,
        0.3,
        500,
        vec![Estimand::MeanMcar, Estimand::MeanPlm],
        91,
    ));
    let (lin, plm) = (summary(&r, Estimand::MeanMcar), summary(&r, Estimand::MeanPlm));
    let ok = plm.empirical_variance <= lin.empirical_variance;
    let line = report(
        9,
        ok,
        &format!(
            "empirical variance partially linear {:.5} vs linear on (x, z) {:.5}",
            plm.empirical_variance, lin.empirical_variance
        ),
    );
    assert!(ok, "{line}");
}
