//! ℓ1-penalized convex solvers.
//!
//! Two smooth losses appear throughout the estimators:
//!
//! * a weighted least-squares loss `N⁻¹ Σ wᵢ (yᵢ − xᵢᵀβ)²` ([`QuadProblem`],
//!   solved by cyclic coordinate descent), and
//! * the exponential-tilt propensity loss `vᵀα + N⁻¹ Σ exp(−xᵢᵀα)`
//!   ([`TiltProblem`], solved by accelerated proximal gradient with
//!   backtracking).
//!
//! Both add `λ Σ |θⱼ|` over the penalized coordinates. Coordinate 0 is the
//! intercept and is left unpenalized unless `penalize_intercept` is set.

mod cv;
mod lasso;
mod tilt;

pub use cv::{
    cross_validate, default_grid, fit_with_rule, CvFamily, CvOutcome, LambdaRule, QuadSpec, TiltSpec,
    DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO, WIDE_GRID_RATIO,
};
pub use lasso::{quad_gradient, quad_objective, solve_lasso, solve_lasso_warm};
pub use tilt::{solve_tilt, solve_tilt_warm, tilt_gradient, tilt_objective, EXP_CLAMP};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Tolerance on the KKT residual.
    pub tol: f64,
    /// Coordinate-descent sweeps for the quadratic loss.
    pub max_sweeps: usize,
    /// Proximal steps for the tilt loss.
    pub max_prox_steps: usize,
    /// Sup-norm beyond which a still-decreasing tilt fit is declared unbounded.
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_sweeps: 10_000, max_prox_steps: 5_000, divergence_bound: 1e4 }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// One ℓ1-penalized solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some exponent hit the ±[`EXP_CLAMP`] guard during evaluation.
    pub clamped: bool,
    /// Objective after every sweep / accepted proximal step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl PenalizedFit {
    pub(crate) fn support_of(beta: &[f64]) -> Vec<usize> {
        beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }

    /// Constant fit used when a caller injects nuisance values directly.
    pub fn fixed(beta: Vec<f64>) -> Self {
        let support = Self::support_of(&beta);
        PenalizedFit {
            beta,
            lambda: 0.0,
            support,
            objective: f64::NAN,
            kkt_residual: f64::NAN,
            iterations: 0,
            converged: true,
            clamped: false,
            trace: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }
}

/// Weighted least-squares problem
/// `min_β N⁻¹ Σ wᵢ (yᵢ − xᵢᵀβ)² + λ‖β_pen‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct QuadProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weights: &'a [f64],
    pub normalizer: f64,
    pub lambda: f64,
    pub penalize_intercept: bool,
}

/// Exponential-tilt problem
/// `min_α vᵀα + N⁻¹ Σ exp(−xᵢᵀα) + λ‖α_pen‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct TiltProblem<'a> {
    pub linear: &'a [f64],
    pub x: &'a DMatrix<f64>,
    pub normalizer: f64,
    pub lambda: f64,
    pub penalize_intercept: bool,
}

#[inline]
pub(crate) fn is_penalized(j: usize, penalize_intercept: bool) -> bool {
    j > 0 || penalize_intercept
}

/// Subgradient optimality violation of one coordinate.
#[inline]
pub(crate) fn kkt_violation(grad: f64, coef: f64, lambda: f64, penalized: bool) -> f64 {
    if !penalized {
        grad.abs()
    } else if coef > 0.0 {
        (grad + lambda).abs()
    } else if coef < 0.0 {
        (grad - lambda).abs()
    } else {
        (grad.abs() - lambda).max(0.0)
    }
}

#[inline]
pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column `j` of a column-major matrix.
#[inline]
pub(crate) fn col(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

pub(crate) fn l1_penalty(beta: &[f64], lambda: f64, penalize_intercept: bool) -> f64 {
    let start = usize::from(!penalize_intercept);
    lambda * beta.iter().skip(start).map(|b| b.abs()).sum::<f64>()
}

/// Gather rows of `x` by index.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let d = x.ncols();
    let mut out = DMatrix::zeros(idx.len(), d);
    for j in 0..d {
        let src = col(x, j);
        let n = idx.len();
        let dst = &mut out.as_mut_slice()[j * n..(j + 1) * n];
        for (o, &i) in dst.iter_mut().zip(idx) {
            *o = src[i];
        }
    }
    out
}
