use proptest::prelude::*;
use summint_core::Estimand;
use summint_sim::metrics::{median, summarize, Outcome};

fn outcomes(points: &[f64], half: f64) -> Vec<Outcome> {
    points.iter().map(|&p| Outcome { point: p, ci: Some((p - half, p + half)), variance: Some(half * half) }).collect()
}

proptest! {
    #[test]
    fn shifting_estimates_and_truth_leaves_errors_unchanged(
        points in prop::collection::vec(-50.0f64..50.0, 1..40),
        truth in -5.0f64..5.0,
        shift in -100.0f64..100.0,
        half in 0.0f64..3.0,
    ) {
        let a = summarize(Estimand::ThetaG, truth, &outcomes(&points, half), 0);
        let moved: Vec<f64> = points.iter().map(|p| p + shift).collect();
        let b = summarize(Estimand::ThetaG, truth + shift, &outcomes(&moved, half), 0);
        prop_assert!((a.bias - b.bias).abs() <= 1e-9 * (1.0 + shift.abs()));
        prop_assert!((a.rmse_med - b.rmse_med).abs() <= 1e-9 * (1.0 + shift.abs()));
        prop_assert!(a.rmse_med >= a.bias.abs() - 1e-12 || points.len() % 2 == 0);
        let cov = a.coverage.unwrap();
        prop_assert!((0.0..=1.0).contains(&cov));
    }

    #[test]
    fn median_splits_the_sample(values in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let m = median(&values).unwrap();
        let below = values.iter().filter(|v| **v < m).count();
        let above = values.iter().filter(|v| **v > m).count();
        prop_assert!(below <= values.len() / 2 && above <= values.len() / 2);
    }

    #[test]
    fn coverage_counts_intervals_holding_the_truth(points in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let s = summarize(Estimand::TauG, 0.0, &outcomes(&points, 1.0), 2);
        let inside = points.iter().filter(|p| p.abs() <= 1.0).count();
        prop_assert_eq!(s.coverage.unwrap(), inside as f64 / points.len() as f64);
        prop_assert_eq!(s.failed, 2);
        prop_assert!((s.length.unwrap() - 2.0).abs() < 1e-12);
    }
}
