//! Independent checks of solver output and of summary sufficiency.
//!
//! Nothing here calls the gradient or objective code in [`crate::optim`];
//! losses are recomputed row by row from their definitions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{estimate_ate_generalize, estimate_ate_transport};
use crate::config::EstimatorConfig;
use crate::data::{summarize_external, PrimaryDataset};
use crate::error::{Error, Result};
use crate::mar::{estimate_theta_g, estimate_theta_t};
use crate::mcar::estimate_mean_mcar;
use crate::optim::{PenalizedFit, QuadProblem, TiltProblem};
use crate::report::{EstimateReport, Estimand};

/// A penalized problem whose solution is being certified.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Quad(QuadProblem<'a>),
    Tilt(TiltProblem<'a>),
}

impl Problem<'_> {
    fn lambda(&self) -> f64 {
        match self {
            Problem::Quad(p) => p.lambda,
            Problem::Tilt(p) => p.lambda,
        }
    }

    fn penalize_intercept(&self) -> bool {
        match self {
            Problem::Quad(p) => p.penalize_intercept,
            Problem::Tilt(p) => p.penalize_intercept,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Problem::Quad(p) => p.x.ncols(),
            Problem::Tilt(p) => p.x.ncols(),
        }
    }

    /// Smooth part of the loss.
    pub fn smooth_loss(&self, coef: &[f64]) -> f64 {
        match self {
            Problem::Quad(p) => {
                let mut s = 0.0;
                for i in 0..p.x.nrows() {
                    let fit: f64 = (0..coef.len()).map(|j| p.x[(i, j)] * coef[j]).sum();
                    s += p.weights[i] * (p.y[i] - fit) * (p.y[i] - fit);
                }
                s / p.normalizer
            }
            Problem::Tilt(p) => {
                let mut s = 0.0;
                for i in 0..p.x.nrows() {
                    let t: f64 = (0..coef.len()).map(|j| p.x[(i, j)] * coef[j]).sum();
                    s += (-t).exp();
                }
                let lin: f64 = p.linear.iter().zip(coef).map(|(a, b)| a * b).sum();
                lin + s / p.normalizer
            }
        }
    }

    /// Gradient of the smooth part, accumulated row by row.
    pub fn smooth_gradient(&self, coef: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        match self {
            Problem::Quad(p) => {
                for i in 0..p.x.nrows() {
                    let fit: f64 = (0..d).map(|j| p.x[(i, j)] * coef[j]).sum();
                    let c = -2.0 * p.weights[i] * (p.y[i] - fit) / p.normalizer;
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += c * p.x[(i, j)];
                    }
                }
            }
            Problem::Tilt(p) => {
                for i in 0..p.x.nrows() {
                    let t: f64 = (0..d).map(|j| p.x[(i, j)] * coef[j]).sum();
                    let c = -(-t).exp() / p.normalizer;
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += c * p.x[(i, j)];
                    }
                }
                for (gj, v) in g.iter_mut().zip(p.linear) {
                    *gj += v;
                }
            }
        }
        g
    }
}

/// Largest violation of the subgradient optimality conditions at `fit.beta`.
pub fn kkt_residual(fit: &PenalizedFit, problem: &Problem<'_>) -> f64 {
    kkt_residual_at(&fit.beta, problem)
}

pub fn kkt_residual_at(coef: &[f64], problem: &Problem<'_>) -> f64 {
    let g = problem.smooth_gradient(coef);
    let lambda = problem.lambda();
    let mut worst: f64 = 0.0;
    for (j, (&gj, &cj)) in g.iter().zip(coef).enumerate() {
        let penalized = j > 0 || problem.penalize_intercept();
        let v = if !penalized {
            gj.abs()
        } else if cj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj + lambda * cj.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Central finite-difference gradient with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut p = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for j in 0..point.len() {
        p[j] = point[j] + h;
        let up = f(&p);
        p[j] = point[j] - h;
        let down = f(&p);
        p[j] = point[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluation near coordinate {j}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Grid all external covariates are snapped to before the check. With
/// entries on this grid and bounded as below, every sum entering the
/// summary is exact, so any two row sets with the same exact moments give
/// bit-identical summaries.
const GRID: f64 = 1.0 / 256.0;
const MAX_ABS: f64 = 256.0;
const MAX_ROWS: usize = 1 << 16;

/// One comparison of [`shuffle_equivalence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleCheck {
    pub name: String,
    /// Only the point estimate is compared (the replacement keeps the mean
    /// but not the second moments).
    pub point_only: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleOutcome {
    pub estimand: Estimand,
    pub checks: Vec<ShuffleCheck>,
}

impl ShuffleOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn snap(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rows.len() > MAX_ROWS {
        return Err(Error::invalid(format!("at most {MAX_ROWS} external rows supported")));
    }
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|v| {
                    let s = (v / GRID).round() * GRID;
                    if s.abs() > MAX_ABS {
                        Err(Error::invalid(format!("external covariate {v} exceeds {MAX_ABS} in magnitude")))
                    } else {
                        Ok(s)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthogonal 4-row mix `Q = I − 2uuᵀ`, `u = (1, 1, −1, −1)/2`, applied to
/// consecutive blocks. `Q` fixes the all-ones vector and preserves `XᵀX`,
/// so count, mean and gram are unchanged while the rows themselves differ.
fn householder_mix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = rows.to_vec();
    let sign = [1.0, 1.0, -1.0, -1.0];
    for block in out.chunks_exact_mut(4) {
        let d = block[0].len();
        for j in 0..d {
            let proj: f64 = (0..4).map(|r| sign[r] * block[r][j]).sum::<f64>() / 2.0;
            for r in 0..4 {
                block[r][j] -= sign[r] * proj;
            }
        }
    }
    out
}

/// Replace pairs `(a, b)` by `(a + δ, b − δ)` with `δ` random and zero on
/// the intercept: the mean is kept, second moments are not.
fn mean_preserving_pairs(rows: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out = rows.to_vec();
    for pair in out.chunks_exact_mut(2) {
        for j in 1..pair[0].len() {
            let delta = f64::from(rng.random_range(-64i32..=64)) * GRID;
            pair[0][j] += delta;
            pair[1][j] -= delta;
        }
    }
    out
}

fn run(estimand: Estimand, data: &PrimaryDataset, rows: &[Vec<f64>], cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let summary = summarize_external(rows)?;
    match estimand {
        Estimand::MeanMcar => Ok(estimate_mean_mcar(data, &summary, cfg)?.report),
        Estimand::ThetaG => estimate_theta_g(data, &summary, cfg),
        Estimand::ThetaT => estimate_theta_t(data, &summary, cfg),
        Estimand::TauG => estimate_ate_generalize(data, &summary, cfg),
        Estimand::TauT => estimate_ate_transport(data, &summary, cfg),
        Estimand::MeanPlm => Err(Error::invalid("shuffle check needs an estimand that uses external units only through summaries")),
    }
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

/// Estimate from the summary of `external_rows` and again from several
/// replacement row sets with identical summaries (or identical mean, for
/// the point-only check); every pair must agree bit for bit.
pub fn shuffle_equivalence(
    data: &PrimaryDataset,
    external_rows: &[Vec<f64>],
    estimand: Estimand,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<ShuffleOutcome> {
    if external_rows.len() != data.n_external() {
        return Err(Error::Dimension { expected: data.n_external(), found: external_rows.len() });
    }
    let rows = snap(external_rows)?;
    let base = run(estimand, data, &rows, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut permuted = rows.clone();
    permuted.shuffle(&mut rng);
    let mut mixed = householder_mix(&permuted);
    mixed.shuffle(&mut rng);
    let paired = mean_preserving_pairs(&permuted, &mut rng);

    let mut checks = Vec::new();
    for (name, alt, point_only) in [("permutation", &permuted, false), ("orthogonal_mix", &mixed, false), ("mean_preserving_pairs", &paired, true)] {
        let other = run(estimand, data, alt, cfg)?;
        let passed = if point_only {
            same_bits(base.point, other.point)
        } else {
            serde_json::to_string(&base)? == serde_json::to_string(&other)?
                && same_bits(base.point, other.point)
                && base.variance.map(f64::to_bits) == other.variance.map(f64::to_bits)
        };
        checks.push(ShuffleCheck { name: name.into(), point_only, passed });
    }
    Ok(ShuffleOutcome { estimand, checks })
}
