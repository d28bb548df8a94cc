use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    col, dot, is_penalized, select_rows, solve_lasso_warm, solve_tilt_warm, PenalizedFit, QuadProblem, SolverOptions,
    TiltProblem,
};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_LEN: usize = 30;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
/// Consecutive grid points without a held-out improvement after which a
/// fold's path is abandoned.
pub const CV_PATIENCE: usize = 5;
/// Grid ratio used instead when there are fewer rows than columns.
pub const WIDE_GRID_RATIO: f64 = 1e-2;
/// CV paths stop once the training loss falls below this share of the
/// loss at the top of the grid.
pub const SATURATION_LOSS_RATIO: f64 = 1e-3;

/// How a penalty level is chosen for one nuisance fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// `c · sqrt(log d / n_labeled)` with `n_labeled` the labeled rows in the fit.
    Theory(f64),
    /// K-fold cross-validation over `grid` (default grid when `None`).
    Cv { folds: usize, grid: Option<Vec<f64>> },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Cv { folds: 5, grid: None }
    }
}

/// Weighted least squares over labeled rows; the normalizer is shared out
/// across CV folds in proportion to row counts.
#[derive(Debug, Clone, Copy)]
pub struct QuadSpec<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weights: &'a [f64],
    pub normalizer: f64,
    pub penalize_intercept: bool,
}

/// Tilt loss with linear term `(external / normalizer) · mean`.
#[derive(Debug, Clone, Copy)]
pub struct TiltSpec<'a> {
    pub x: &'a DMatrix<f64>,
    pub mean: &'a [f64],
    /// External mass entering the linear term.
    pub external: f64,
    pub normalizer: f64,
    pub penalize_intercept: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum CvFamily<'a> {
    Quad(QuadSpec<'a>),
    Tilt(TiltSpec<'a>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Average held-out loss per grid point (infinite where a fold failed).
    pub losses: Vec<f64>,
}

impl TiltSpec<'_> {
    fn linear(&self) -> Vec<f64> {
        let s = self.external / self.normalizer;
        self.mean.iter().map(|m| s * m).collect()
    }
}

impl<'a> CvFamily<'a> {
    fn rows(&self) -> usize {
        match self {
            CvFamily::Quad(q) => q.x.nrows(),
            CvFamily::Tilt(t) => t.x.nrows(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            CvFamily::Quad(q) => q.x.ncols(),
            CvFamily::Tilt(t) => t.x.ncols(),
        }
    }

    fn penalize_intercept(&self) -> bool {
        match self {
            CvFamily::Quad(q) => q.penalize_intercept,
            CvFamily::Tilt(t) => t.penalize_intercept,
        }
    }

    fn solve(&self, lambda: f64, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<PenalizedFit> {
        match self {
            CvFamily::Quad(q) => solve_lasso_warm(
                &QuadProblem {
                    x: q.x,
                    y: q.y,
                    weights: q.weights,
                    normalizer: q.normalizer,
                    lambda,
                    penalize_intercept: q.penalize_intercept,
                },
                opts,
                warm,
            ),
            CvFamily::Tilt(t) => {
                let v = t.linear();
                solve_tilt_warm(
                    &TiltProblem {
                        linear: &v,
                        x: t.x,
                        normalizer: t.normalizer,
                        lambda,
                        penalize_intercept: t.penalize_intercept,
                    },
                    opts,
                    warm,
                )
            }
        }
    }

    /// Smallest λ at which every penalized coordinate is zero.
    fn lambda_max(&self) -> f64 {
        let d = self.dim();
        let pi = self.penalize_intercept();
        let grad: Vec<f64> = match self {
            CvFamily::Quad(q) => {
                let n = q.x.nrows();
                let mut r = q.y.to_vec();
                if !pi {
                    let wsum: f64 = q.weights.iter().sum();
                    let c = if wsum > 0.0 { dot(q.weights, q.y) / wsum } else { 0.0 };
                    let x0 = col(q.x, 0);
                    for i in 0..n {
                        r[i] -= c * x0[i];
                    }
                }
                for i in 0..n {
                    r[i] *= q.weights[i];
                }
                (0..d).map(|j| -2.0 * dot(col(q.x, j), &r) / q.normalizer).collect()
            }
            CvFamily::Tilt(t) => {
                let v = t.linear();
                let n = t.x.nrows();
                let a0 = if !pi && n > 0 && v[0] > 0.0 { (n as f64 / (t.normalizer * v[0])).ln() } else { 0.0 };
                let x0 = col(t.x, 0);
                let e: Vec<f64> = (0..n).map(|i| (-a0 * x0[i]).clamp(-700.0, 700.0).exp()).collect();
                (0..d).map(|j| v[j] - dot(col(t.x, j), &e) / t.normalizer).collect()
            }
        };
        // Rounded up so the solve at the top of the grid is exactly sparse.
        let lmax = (0..d).filter(|&j| is_penalized(j, pi)).map(|j| grad[j].abs()).fold(0.0, f64::max);
        lmax * (1.0 + 1e-9)
    }

    /// [`DEFAULT_GRID_RATIO`], or [`WIDE_GRID_RATIO`] for wide designs.
    pub fn default_ratio(&self) -> f64 {
        if self.rows() < self.dim() {
            WIDE_GRID_RATIO
        } else {
            DEFAULT_GRID_RATIO
        }
    }

    /// Unconverged after the full iteration budget.
    fn exhausted(&self, fit: &PenalizedFit, opts: &SolverOptions) -> bool {
        let budget = match self {
            CvFamily::Quad(_) => opts.max_sweeps,
            CvFamily::Tilt(_) => opts.max_prox_steps,
        };
        !fit.converged && fit.iterations >= budget
    }

    /// Whether the path has reached the interpolation regime: as many
    /// active coordinates as usable rows, or (least squares) less than
    /// [`SATURATION_LOSS_RATIO`] of the first fit's loss left.
    fn saturated(&self, fit: &PenalizedFit, loss: f64, null_loss: f64) -> bool {
        let rows = match self {
            CvFamily::Quad(q) => q.weights.iter().filter(|w| **w > 0.0).count(),
            CvFamily::Tilt(t) => t.x.nrows(),
        };
        if fit.support.len() >= rows {
            return true;
        }
        matches!(self, CvFamily::Quad(_)) && null_loss > 0.0 && loss < SATURATION_LOSS_RATIO * null_loss
    }

    /// Training and validation problems for CV fold `f` of `k`.
    fn split(&self, val: &[usize], train: &[usize], f: usize, k: usize) -> (Owned, Owned) {
        let n = self.rows() as f64;
        match self {
            CvFamily::Quad(q) => {
                let part = |idx: &[usize]| Owned::Quad {
                    x: select_rows(q.x, idx),
                    y: idx.iter().map(|&i| q.y[i]).collect(),
                    w: idx.iter().map(|&i| q.weights[i]).collect(),
                    normalizer: q.normalizer * idx.len() as f64 / n,
                    penalize_intercept: q.penalize_intercept,
                };
                (part(train), part(val))
            }
            CvFamily::Tilt(t) => {
                // External mass is dealt out evenly across CV folds.
                let ext_total = t.external.round().max(0.0) as usize;
                let ext_val = (ext_total / k + usize::from(f < ext_total % k)) as f64;
                let ext_train = t.external - ext_val;
                let mass = n + t.external;
                let part = |idx: &[usize], ext: f64| Owned::Tilt {
                    x: select_rows(t.x, idx),
                    mean: t.mean.to_vec(),
                    external: ext,
                    normalizer: t.normalizer * (idx.len() as f64 + ext) / mass,
                    penalize_intercept: t.penalize_intercept,
                };
                (part(train, ext_train), part(val, ext_val))
            }
        }
    }
}

enum Owned {
    Quad { x: DMatrix<f64>, y: Vec<f64>, w: Vec<f64>, normalizer: f64, penalize_intercept: bool },
    Tilt { x: DMatrix<f64>, mean: Vec<f64>, external: f64, normalizer: f64, penalize_intercept: bool },
}

impl Owned {
    fn family(&self) -> CvFamily<'_> {
        match self {
            Owned::Quad { x, y, w, normalizer, penalize_intercept } => CvFamily::Quad(QuadSpec {
                x,
                y,
                weights: w,
                normalizer: *normalizer,
                penalize_intercept: *penalize_intercept,
            }),
            Owned::Tilt { x, mean, external, normalizer, penalize_intercept } => CvFamily::Tilt(TiltSpec {
                x,
                mean,
                external: *external,
                normalizer: *normalizer,
                penalize_intercept: *penalize_intercept,
            }),
        }
    }

    /// Unpenalized held-out loss at `beta`.
    fn loss(&self, beta: &[f64]) -> f64 {
        match self {
            Owned::Quad { x, y, w, normalizer, .. } => {
                let mut s = 0.0;
                for i in 0..x.nrows() {
                    let fit: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
                    s += w[i] * (y[i] - fit).powi(2);
                }
                if *normalizer > 0.0 {
                    s / normalizer
                } else {
                    0.0
                }
            }
            Owned::Tilt { x, mean, external, normalizer, .. } => {
                if *normalizer <= 0.0 {
                    return 0.0;
                }
                let lin = external / normalizer * dot(mean, beta);
                let mut s = 0.0;
                for i in 0..x.nrows() {
                    let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
                    s += (-eta).clamp(-700.0, 700.0).exp();
                }
                lin + s / normalizer
            }
        }
    }
}

/// `len` log-spaced points from `λ_max` down to `ratio · λ_max`.
pub fn default_grid(family: &CvFamily<'_>, len: usize, ratio: f64) -> Vec<f64> {
    let lmax = family.lambda_max();
    if !(lmax > 0.0 && lmax.is_finite()) || len < 2 {
        return vec![if lmax.is_finite() { lmax } else { 0.0 }];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..len).map(|i| (hi + (lo - hi) * i as f64 / (len - 1) as f64).exp()).collect()
}

/// Pick λ from `grid` by K-fold CV over the labeled rows.
pub fn cross_validate(
    family: &CvFamily<'_>,
    folds: usize,
    grid: &[f64],
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lambda grid must be finite, nonnegative and strictly decreasing"));
    }
    if grid.len() == 1 {
        return Ok(CvOutcome { lambda: grid[0], grid: grid.to_vec(), losses: vec![f64::NAN] });
    }
    let n = family.rows();
    let k = folds.min(n);
    if k < 2 {
        return Err(Error::CrossValidation);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut totals = vec![0.0; grid.len()];
    for f in 0..k {
        let lo = f * n / k;
        let hi = (f + 1) * n / k;
        let mut val: Vec<usize> = perm[lo..hi].to_vec();
        val.sort_unstable();
        let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        train.sort_unstable();
        let (tr, va) = family.split(&val, &train, f, k);
        let tr_family = tr.family();

        let mut warm: Option<Vec<f64>> = None;
        let mut null_loss = None;
        let mut best_held_out = f64::INFINITY;
        let mut rises = 0usize;
        // Set once a solve fails or runs out of iterations, the training fit saturates, or
        // the held-out loss has not improved for `CV_PATIENCE` steps;
        // smaller λ are then excluded for this fold.
        let mut stopped = false;
        for (g, &lambda) in grid.iter().enumerate() {
            if stopped {
                totals[g] = f64::INFINITY;
                continue;
            }
            let r = tr_family.solve(lambda, opts, warm.as_deref());
            match r {
                Ok(fit) if !tr_family.exhausted(&fit, opts) => {
                    let l = va.loss(&fit.beta);
                    totals[g] += if l.is_finite() { l } else { f64::INFINITY };
                    if l < best_held_out {
                        best_held_out = l;
                        rises = 0;
                    } else {
                        rises += 1;
                    }
                    let train_loss = fit.objective - super::l1_penalty(&fit.beta, lambda, tr_family.penalize_intercept());
                    let null = *null_loss.get_or_insert(train_loss);
                    stopped = tr_family.saturated(&fit, train_loss, null) || rises >= CV_PATIENCE;
                    warm = Some(fit.beta);
                }
                _ => {
                    stopped = true;
                    totals[g] = f64::INFINITY;
                }
            }
        }
    }
    let losses: Vec<f64> = totals.iter().map(|t| t / k as f64).collect();
    let mut best: Option<usize> = None;
    for (g, &l) in losses.iter().enumerate() {
        if l.is_finite() && best.is_none_or(|b| l < losses[b]) {
            best = Some(g);
        }
    }
    let best = best.ok_or(Error::CrossValidation)?;
    Ok(CvOutcome { lambda: grid[best], grid: grid.to_vec(), losses })
}

/// Resolve `rule` and fit on the full data. Under CV the final fit follows
/// the grid path down to the chosen λ with warm starts.
pub fn fit_with_rule(
    family: &CvFamily<'_>,
    rule: &LambdaRule,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(PenalizedFit, Option<CvOutcome>)> {
    match rule {
        LambdaRule::Fixed(l) => Ok((family.solve(*l, opts, None)?, None)),
        LambdaRule::Theory(c) => {
            let n = family.rows().max(1) as f64;
            let d = family.dim().max(2) as f64;
            let l = c * (d.ln() / n).sqrt();
            Ok((family.solve(l, opts, None)?, None))
        }
        LambdaRule::Cv { folds, grid } => {
            let grid = match grid {
                Some(g) => g.clone(),
                None => default_grid(family, DEFAULT_GRID_LEN, family.default_ratio()),
            };
            let cv = cross_validate(family, *folds, &grid, seed, opts)?;
            let mut warm: Option<Vec<f64>> = None;
            let mut fit = None;
            for &lambda in cv.grid.iter().filter(|&&l| l >= cv.lambda) {
                let f = family.solve(lambda, opts, warm.as_deref())?;
                warm = Some(f.beta.clone());
                fit = Some(f);
            }
            Ok((fit.expect("chosen lambda lies on the grid"), Some(cv)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { (((i * 31 + j * 17) % 23) as f64) / 11.0 - 1.0 })
    }

    #[test]
    fn singleton_grid() {
        let x = design(10, 3);
        let y = vec![1.0; 10];
        let w = vec![1.0; 10];
        let fam = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 10.0, penalize_intercept: false });
        let out = cross_validate(&fam, 5, &[0.3], 1, &SolverOptions::default()).unwrap();
        assert_eq!(out.lambda, 0.3);
    }

    #[test]
    fn grid_must_decrease() {
        let x = design(10, 3);
        let y = vec![1.0; 10];
        let w = vec![1.0; 10];
        let fam = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 10.0, penalize_intercept: false });
        assert!(cross_validate(&fam, 5, &[0.1, 0.2], 1, &SolverOptions::default()).is_err());
    }

    #[test]
    fn lambda_max_gives_intercept_only() {
        let x = design(40, 6);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 2)] * 2.0 + (i as f64 * 0.7).sin()).collect();
        let w = vec![1.0; 40];
        let fam = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 40.0, penalize_intercept: false });
        let grid = default_grid(&fam, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO);
        assert_eq!(grid.len(), 30);
        assert!((grid[29] / grid[0] - 1e-3).abs() < 1e-12);
        let fit = fam.solve(grid[0], &SolverOptions::default(), None).unwrap();
        assert_eq!(fit.support, vec![0]);
        let fit = fam.solve(grid[3], &SolverOptions::default(), None).unwrap();
        assert!(fit.support.len() > 1);
    }

    #[test]
    fn tilt_lambda_max_gives_intercept_only() {
        let x = design(30, 5);
        let mean = [1.0, 0.2, -0.1, 0.05, 0.3];
        let fam = CvFamily::Tilt(TiltSpec { x: &x, mean: &mean, external: 70.0, normalizer: 100.0, penalize_intercept: false });
        let grid = default_grid(&fam, 10, 1e-2);
        let fit = fam.solve(grid[0] * 1.000001, &SolverOptions::default(), None).unwrap();
        assert_eq!(fit.support, vec![0]);
    }

    #[test]
    fn cv_is_deterministic_and_on_grid() {
        let x = design(60, 8);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 1)] - x[(i, 3)] + 0.3 * (i as f64).cos()).collect();
        let w = vec![1.0; 60];
        let fam = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 60.0, penalize_intercept: false });
        let rule = LambdaRule::default();
        let (a, cva) = fit_with_rule(&fam, &rule, 9, &SolverOptions::default()).unwrap();
        let (b, _) = fit_with_rule(&fam, &rule, 9, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
        let cva = cva.unwrap();
        assert!(cva.grid.contains(&cva.lambda));
        assert_eq!(a.lambda, cva.lambda);
    }

    #[test]
    fn wide_designs_stop_early() {
        let x = design(30, 60);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 1)] + (i as f64 * 1.3).sin()).collect();
        let w = vec![1.0; 30];
        let fam = CvFamily::Quad(QuadSpec { x: &x, y: &y, weights: &w, normalizer: 30.0, penalize_intercept: false });
        assert_eq!(fam.default_ratio(), WIDE_GRID_RATIO);
        let grid = default_grid(&fam, DEFAULT_GRID_LEN, WIDE_GRID_RATIO);
        let out = cross_validate(&fam, 5, &grid, 4, &SolverOptions::default()).unwrap();
        assert!(out.losses[0].is_finite());
        assert!(out.losses[out.grid.iter().position(|l| *l == out.lambda).unwrap()].is_finite());
        // Past a fold's stopping point the grid is excluded, never selected.
        let last = out.losses.iter().rposition(|l| l.is_finite()).unwrap();
        assert!(out.losses[last + 1..].iter().all(|l| l.is_infinite()));
    }
}
