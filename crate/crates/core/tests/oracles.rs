mod common;

use common::{linear_sample, random_matrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use summint_core::link::{logistic, odds_weight, inverse_logistic};
use summint_core::optim::{
    quad_gradient, solve_lasso, solve_tilt, tilt_gradient, tilt_objective, PenalizedFit, QuadProblem, SolverOptions,
    TiltProblem,
};
use summint_core::verify::{fd_gradient, kkt_residual, kkt_residual_at, shuffle_equivalence, Problem};
use summint_core::{EstimatorConfig, Estimand};
use summint_core::optim::LambdaRule;

fn quad_instance(seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(30..120);
    let d = rng.random_range(2..25);
    let x = random_matrix(n, d, &mut rng);
    let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] * 1.5 - 0.5 + rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    (x, y, w)
}

#[test]
fn ols_at_zero_lambda_has_zero_residual() {
    let (x, y, w) = quad_instance(1);
    let d = x.ncols().min(6);
    let x = x.columns(0, d).into_owned();
    let n = x.nrows();
    let wx = DMatrix::from_fn(n, d, |i, j| x[(i, j)] * w[i]);
    let lhs = x.tr_mul(&wx);
    let rhs = wx.tr_mul(&nalgebra::DVector::from_column_slice(&y));
    let beta: Vec<f64> = lhs.lu().solve(&rhs).unwrap().iter().copied().collect();
    let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n as f64, lambda: 0.0, penalize_intercept: false };
    assert!(kkt_residual_at(&beta, &Problem::Quad(p)) <= 1e-10);
}

#[test]
fn zero_is_optimal_above_lambda_max() {
    let (x, y, w) = quad_instance(2);
    let n = x.nrows() as f64;
    let mut p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n, lambda: 0.0, penalize_intercept: true };
    let zero = vec![0.0; x.ncols()];
    let g = Problem::Quad(p).smooth_gradient(&zero);
    p.lambda = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(kkt_residual(&PenalizedFit::fixed(zero), &Problem::Quad(p)) <= 1e-12);
}

#[test]
fn solver_fits_pass_the_independent_checker() {
    let opts = SolverOptions::default();
    let mut certified = 0;
    for seed in 0..100 {
        let (x, y, w) = quad_instance(100 + seed);
        let n = x.nrows() as f64;
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: n, lambda: 0.05 + 0.002 * seed as f64, penalize_intercept: false };
        let fit = solve_lasso(&p, &opts).unwrap();
        assert!(fit.converged);
        let r = kkt_residual(&fit, &Problem::Quad(p));
        assert!(r <= 10.0 * opts.tol, "quad seed {seed}: {r}");

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labeled = x.nrows();
        let ext = rng.random_range(20..200) as f64;
        let mean: Vec<f64> = (0..x.ncols()).map(|j| if j == 0 { 1.0 } else { rng.random_range(-0.3..0.3) }).collect();
        let total = labeled as f64 + ext;
        let linear: Vec<f64> = mean.iter().map(|m| m * ext / total).collect();
        let t = TiltProblem { linear: &linear, x: &x, normalizer: total, lambda: 0.08, penalize_intercept: false };
        // Small random instances can be separable, which makes the tilt loss
        // unbounded below; only fits the solver reports as converged are certified.
        match solve_tilt(&t, &opts) {
            Ok(fit) if fit.converged => {
                let r = kkt_residual(&fit, &Problem::Tilt(t));
                assert!(r <= 10.0 * opts.tol, "tilt seed {seed}: {r}");
                certified += 1;
            }
            _ => {}
        }
    }
    assert!(certified >= 80, "only {certified} tilt fits converged");
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    num / den
}

#[test]
fn quadratic_gradient_matches_differences() {
    let (x, y, w) = quad_instance(3);
    let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: x.nrows() as f64, lambda: 0.0, penalize_intercept: false };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let point: Vec<f64> = (0..x.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fd = fd_gradient(|b| Problem::Quad(p).smooth_loss(b), &point, 1e-6).unwrap();
        let g = quad_gradient(&p, &point);
        for (a, b) in fd.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn tilt_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_matrix(80, 6, &mut rng);
    let linear: Vec<f64> = (0..6).map(|j| if j == 0 { 0.6 } else { rng.random_range(-0.2..0.2) }).collect();
    let p = TiltProblem { linear: &linear, x: &x, normalizer: 200.0, lambda: 0.0, penalize_intercept: false };
    for _ in 0..20 {
        let point: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let fd = fd_gradient(|a| tilt_objective(&p, a), &point, 1e-6).unwrap();
        let g = tilt_gradient(&p, &point);
        assert!(relative_error(&g, &fd) <= 1e-5);
        let own = Problem::Tilt(p).smooth_gradient(&point);
        assert!(relative_error(&own, &fd) <= 1e-5);
    }
}

#[test]
fn scalar_link_derivative() {
    for t in [-5.0, 0.0, 5.0] {
        let fd = fd_gradient(|v| inverse_logistic(v[0]), &[t], 1e-6).unwrap()[0];
        assert!((fd + (-t as f64).exp()).abs() <= 1e-6 * (1.0 + (-t as f64).exp()));
    }
}

#[test]
fn odds_weight_is_odds_of_the_link() {
    for t in [-30.0, -3.0, -0.1, 0.0, 0.7, 4.0, 25.0] {
        let g = logistic(t);
        let w = odds_weight(t);
        assert!((w - (1.0 - g) / g).abs() <= 1e-12 * w.max(1.0), "{t}");
    }
}

#[test]
fn fd_reports_non_finite_coordinate() {
    let err = fd_gradient(|v| if v[1] > 0.5 { f64::NAN } else { v[0] }, &[0.0, 0.5], 1e-6).unwrap_err();
    assert!(err.to_string().contains("coordinate 1"));
}

#[test]
fn summaries_are_sufficient() {
    let cfg = EstimatorConfig { lambda: LambdaRule::Cv { folds: 3, grid: None }, seed: 11, ..Default::default() };
    let mcar = linear_sample(600, 8, 0.0, false, 21);
    let out = shuffle_equivalence(&mcar.data, &mcar.external_rows, Estimand::MeanMcar, &cfg, 5).unwrap();
    assert!(out.passed(), "{out:?}");

    let mar = linear_sample(600, 8, 0.8, true, 22);
    for estimand in [Estimand::ThetaG, Estimand::ThetaT, Estimand::TauG, Estimand::TauT] {
        let out = shuffle_equivalence(&mar.data, &mar.external_rows, estimand, &cfg, 6).unwrap();
        assert!(out.passed(), "{out:?}");
    }
}
