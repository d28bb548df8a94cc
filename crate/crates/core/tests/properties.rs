mod common;

use common::random_matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use summint_core::mcar::estimate_mean_mcar;
use summint_core::optim::{
    default_grid, quad_gradient, solve_lasso, solve_lasso_warm, solve_tilt, tilt_gradient, tilt_objective, CvFamily,
    LambdaRule, QuadProblem, QuadSpec, SolverOptions, TiltProblem, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO,
};
use summint_core::verify::fd_gradient;
use summint_core::{make_folds, summarize_external, EstimatorConfig, PrimaryDataset};

#[test]
fn partition_is_exhaustive() {
    for n in [2usize, 3, 7, 10, 64, 333, 1000] {
        for k in [2usize, 5, 10] {
            if n < k {
                continue;
            }
            for split in [false, true] {
                let n_lab = n.div_ceil(2).max(k);
                let n_ext = n.saturating_sub(n_lab);
                let Ok(plan) = make_folds(n_lab, n_ext, k, n as u64 * 31 + k as u64, split) else {
                    continue;
                };
                let mut seen = vec![0u32; n_lab];
                for f in &plan.folds {
                    for &i in &f.labeled {
                        seen[i] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1));
                assert_eq!(plan.folds.iter().map(|f| f.external).sum::<usize>(), n_ext);
                let sizes: Vec<usize> = plan.folds.iter().map(|f| f.size).collect();
                let total = n_lab + n_ext;
                let rem = total % k;
                for (j, s) in sizes.iter().enumerate() {
                    assert_eq!(*s, total / k + usize::from(j < rem));
                }
                for (fold, comp) in plan.folds.iter().zip(&plan.complements) {
                    assert_eq!(comp.all.size + fold.size, total);
                    assert!(comp.all.labeled.iter().all(|i| !fold.labeled.contains(i)));
                    if let (Some(a), Some(b)) = (&comp.alpha, &comp.beta) {
                        let mut both: Vec<usize> = a.labeled.iter().chain(&b.labeled).copied().collect();
                        both.sort_unstable();
                        assert_eq!(both, comp.all.labeled);
                        assert_eq!(a.external + b.external, comp.all.external);
                    }
                }
            }
        }
    }
}

#[test]
fn fold_plans_are_deterministic() {
    let a = make_folds(400, 900, 5, 17, true).unwrap();
    let b = make_folds(400, 900, 5, 17, true).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let handle = std::thread::spawn(|| serde_json::to_string(&make_folds(400, 900, 5, 17, true).unwrap()).unwrap());
    assert_eq!(handle.join().unwrap(), serde_json::to_string(&a).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_identity(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..60)) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r[0] = 1.0; r }).collect();
        let s = summarize_external(&rows).unwrap();
        let n = rows.len() as f64;
        let d = 3;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let gram = s.gram().unwrap();
        for a in 0..d {
            for b in 0..d {
                let cov = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
                prop_assert!((gram[(a, b)] - (cov + mean[a] * mean[b])).abs() <= 1e-12 * (1.0 + gram[(a, b)].abs()));
            }
        }
        let centered = DMatrix::from_fn(d, d, |a, b| gram[(a, b)] - s.mean()[a] * s.mean()[b]);
        let eig = nalgebra::SymmetricEigen::new(centered);
        prop_assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-9));
    }

    #[test]
    fn full_labeling_returns_sample_mean(seed in 0u64..1_000_000, k in 2usize..9, n in 20usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(n, 4, &mut rng);
        let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] + (i as f64).cos()).collect();
        let data = PrimaryDataset::new(x, y.clone(), None, 0).unwrap();
        let summary = summint_core::ExternalSummary::new(0, vec![1.0, 0.0, 0.0, 0.0], None, None).unwrap();
        let cfg = EstimatorConfig { folds: k, seed, lambda: LambdaRule::Fixed(0.05), ..Default::default() };
        let fit = estimate_mean_mcar(&data, &summary, &cfg).unwrap();
        let ybar = y.iter().sum::<f64>() / n as f64;
        prop_assert!((fit.report.point - ybar).abs() <= 1e-12);
    }

    #[test]
    fn quad_gradient_and_descent(seed in 0u64..1_000_000, lambda in 0.001f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(50, 8, &mut rng);
        let y: Vec<f64> = (0..50).map(|i| 2.0 * x[(i, 2)] - x[(i, 5)] + (i as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..50).map(|i| 0.5 + (i % 3) as f64).collect();
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 50.0, lambda, penalize_intercept: false };
        let point: Vec<f64> = (0..8).map(|j| (j as f64 * 0.37 + seed as f64 * 1e-6).sin()).collect();
        let smooth = |b: &[f64]| {
            let r: f64 = (0..50).map(|i| {
                let f: f64 = (0..8).map(|j| x[(i, j)] * b[j]).sum();
                w[i] * (y[i] - f).powi(2)
            }).sum();
            r / 50.0
        };
        let fd = fd_gradient(smooth, &point, 1e-6).unwrap();
        let g = quad_gradient(&p, &point);
        let num: f64 = fd.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(num <= 1e-5 * den.max(1e-8));
        let fit = solve_lasso(&p, &SolverOptions::default()).unwrap();
        prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-14 * w[0].abs().max(1.0)));
    }

    #[test]
    fn tilt_gradient_and_descent(seed in 0u64..1_000_000, lambda in 0.02f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(120, 6, &mut rng);
        let linear = vec![0.5, 0.03, -0.02, 0.0, 0.05, -0.01];
        let p = TiltProblem { linear: &linear, x: &x, normalizer: 240.0, lambda, penalize_intercept: false };
        let point: Vec<f64> = (0..6).map(|j| 0.3 * (j as f64 + seed as f64 * 1e-5).cos()).collect();
        let unpenalized = TiltProblem { lambda: 0.0, ..p };
        let fd = fd_gradient(|a| tilt_objective(&unpenalized, a), &point, 1e-6).unwrap();
        let g = tilt_gradient(&p, &point);
        let num: f64 = fd.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(num <= 1e-5 * den.max(1e-8));
        let fit = solve_tilt(&p, &SolverOptions::default()).unwrap();
        prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-14 * w[0].abs().max(1.0)));
    }
}

#[test]
fn support_shrinks_along_the_default_grid() {
    let opts = SolverOptions::default();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(150, 30, &mut rng);
        let y: Vec<f64> = (0..150).map(|i| 1.0 + 2.0 * x[(i, 1)] - x[(i, 2)] + 0.5 * x[(i, 3)] + (i as f64 * 1.3).sin()).collect();
        let w = vec![1.0; 150];
        let family = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 150.0, penalize_intercept: false });
        let grid = default_grid(&family, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO);
        let mut warm: Option<Vec<f64>> = None;
        let mut previous = 0;
        for &lambda in &grid {
            let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 150.0, lambda, penalize_intercept: false };
            let fit = solve_lasso_warm(&p, &opts, warm.as_deref()).unwrap();
            assert!(fit.support.len() >= previous, "seed {seed}: support shrank as lambda decreased at {lambda}");
            previous = fit.support.len();
            warm = Some(fit.beta);
        }
    }
}
