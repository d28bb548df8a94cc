#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use summint_core::{summarize_external, ExternalSummary, PrimaryDataset};

/// Labeled rows, external rows and the matching dataset/summary pair.
pub struct Sample {
    pub data: PrimaryDataset,
    pub external_rows: Vec<Vec<f64>>,
    pub summary: ExternalSummary,
}

pub fn design_row(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) }).collect()
}

/// Linear outcome `1 + 2 x2 − x3 + noise`; labeling depends on `x2` through
/// a logistic link when `shift != 0`; treatment is a fair coin when `treated`.
pub fn linear_sample(n: usize, d: usize, shift: f64, treated: bool, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut external = Vec::new();
    for _ in 0..n {
        let x = design_row(&mut rng, d);
        let p = 1.0 / (1.0 + (-(-0.5 + shift * x[1])).exp());
        let t: u8 = rng.random_range(0..2);
        let noise: f64 = rng.sample(StandardNormal);
        let effect = if treated { f64::from(t) * (1.0 + x[1]) } else { 0.0 };
        let outcome = 1.0 + 2.0 * x[1] - x[2.min(d - 1)] + effect + noise;
        if rng.random::<f64>() < p {
            labeled.push(x);
            y.push(outcome);
            a.push(t);
        } else {
            external.push(x);
        }
    }
    let data = PrimaryDataset::from_rows(&labeled, y, treated.then_some(a), external.len()).unwrap();
    let summary = summarize_external(&external).unwrap();
    Sample { data, external_rows: external, summary }
}

pub fn random_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) })
}
