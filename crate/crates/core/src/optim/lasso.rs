use super::{col, dot, is_penalized, kkt_violation, l1_penalty, soft_threshold, PenalizedFit, QuadProblem, SolverOptions};
use crate::error::{Error, Result};

fn validate(p: &QuadProblem<'_>) -> Result<()> {
    let n = p.x.nrows();
    if p.y.len() != n || p.weights.len() != n {
        return Err(Error::Dimension { expected: n, found: p.y.len().min(p.weights.len()) });
    }
    if !(p.normalizer > 0.0 && p.normalizer.is_finite()) {
        return Err(Error::invalid("normalizer must be positive"));
    }
    if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be finite and nonnegative"));
    }
    if p.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if !p.weights.iter().any(|w| *w > 0.0) {
        return Err(Error::invalid("no row with positive weight"));
    }
    if p.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    Ok(())
}

/// Smooth part `N⁻¹ Σ wᵢ (yᵢ − xᵢᵀβ)²` plus the penalty.
pub fn quad_objective(p: &QuadProblem<'_>, beta: &[f64]) -> f64 {
    let n = p.x.nrows();
    let mut fitted = vec![0.0; n];
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (f, xv) in fitted.iter_mut().zip(col(p.x, j)) {
                *f += b * xv;
            }
        }
    }
    let loss: f64 = (0..n).map(|i| p.weights[i] * (p.y[i] - fitted[i]).powi(2)).sum::<f64>() / p.normalizer;
    loss + l1_penalty(beta, p.lambda, p.penalize_intercept)
}

/// Gradient of the smooth part, `−2N⁻¹ Σ wᵢ xᵢ (yᵢ − xᵢᵀβ)`.
pub fn quad_gradient(p: &QuadProblem<'_>, beta: &[f64]) -> Vec<f64> {
    let n = p.x.nrows();
    let mut wr = p.y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (r, xv) in wr.iter_mut().zip(col(p.x, j)) {
                *r -= b * xv;
            }
        }
    }
    for i in 0..n {
        wr[i] *= p.weights[i];
    }
    (0..p.x.ncols()).map(|j| -2.0 * dot(col(p.x, j), &wr) / p.normalizer).collect()
}

pub fn solve_lasso(p: &QuadProblem<'_>, opts: &SolverOptions) -> Result<PenalizedFit> {
    solve_lasso_warm(p, opts, None)
}

/// Cyclic coordinate descent with soft-thresholding.
///
/// Full sweeps alternate with sweeps over the current active set; the fit is
/// converged once a full KKT check passes at `opts.tol`.
pub fn solve_lasso_warm(p: &QuadProblem<'_>, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<PenalizedFit> {
    validate(p)?;
    let n = p.x.nrows();
    let d = p.x.ncols();
    let scale = 2.0 / p.normalizer;

    // Weighted columns and per-coordinate curvature.
    let mut wx = vec![0.0; n * d];
    let mut curv = vec![0.0; d];
    for j in 0..d {
        let xj = col(p.x, j);
        let dst = &mut wx[j * n..(j + 1) * n];
        for i in 0..n {
            dst[i] = p.weights[i] * xj[i];
        }
        curv[j] = scale * dot(dst, xj);
    }

    let mut beta = match warm {
        Some(w) if w.len() == d => w.to_vec(),
        Some(w) => return Err(Error::Dimension { expected: d, found: w.len() }),
        None => vec![0.0; d],
    };
    let mut resid = p.y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (r, xv) in resid.iter_mut().zip(col(p.x, j)) {
                *r -= b * xv;
            }
        }
    }

    let penalized: Vec<bool> = (0..d).map(|j| is_penalized(j, p.penalize_intercept)).collect();
    let objective = |beta: &[f64], resid: &[f64]| {
        let loss: f64 = (0..n).map(|i| p.weights[i] * resid[i] * resid[i]).sum::<f64>() / p.normalizer;
        loss + l1_penalty(beta, p.lambda, p.penalize_intercept)
    };

    // Returns the largest curvature-scaled coordinate move.
    let update = |j: usize, beta: &mut [f64], resid: &mut [f64]| -> Result<f64> {
        let wxj = &wx[j * n..(j + 1) * n];
        let grad = -scale * dot(wxj, resid);
        if curv[j] <= 0.0 {
            if grad != 0.0 {
                return Err(Error::DegenerateColumn { column: j });
            }
            return Ok(0.0);
        }
        let z = curv[j] * beta[j] - grad;
        let new = if penalized[j] { soft_threshold(z, p.lambda) / curv[j] } else { z / curv[j] };
        let delta = new - beta[j];
        if delta != 0.0 {
            beta[j] = new;
            for (r, xv) in resid.iter_mut().zip(col(p.x, j)) {
                *r -= delta * xv;
            }
        }
        Ok(curv[j] * delta.abs())
    };

    let kkt = |beta: &[f64], resid: &[f64]| -> f64 {
        (0..d)
            .map(|j| {
                let grad = -scale * dot(&wx[j * n..(j + 1) * n], resid);
                kkt_violation(grad, beta[j], p.lambda, penalized[j])
            })
            .fold(0.0, f64::max)
    };

    let mut trace = vec![objective(&beta, &resid)];
    let mut sweeps = 0usize;
    let mut converged = false;
    let mut residual = kkt(&beta, &resid);
    if residual <= opts.tol {
        converged = true;
    }
    while !converged && sweeps < opts.max_sweeps {
        for j in 0..d {
            update(j, &mut beta, &mut resid)?;
        }
        sweeps += 1;
        trace.push(objective(&beta, &resid));

        let active: Vec<usize> = (0..d).filter(|&j| beta[j] != 0.0 || !penalized[j]).collect();
        while sweeps < opts.max_sweeps {
            let mut moved = 0.0f64;
            for &j in &active {
                moved = moved.max(update(j, &mut beta, &mut resid)?);
            }
            sweeps += 1;
            trace.push(objective(&beta, &resid));
            if moved <= 0.1 * opts.tol {
                break;
            }
        }
        residual = kkt(&beta, &resid);
        converged = residual <= opts.tol;
    }

    let objective = quad_objective(p, &beta);
    Ok(PenalizedFit {
        support: PenalizedFit::support_of(&beta),
        beta,
        lambda: p.lambda,
        objective,
        kkt_residual: residual,
        iterations: sweeps,
        converged,
        clamped: false,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn zero_response_gives_zero_fit() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, -1.0, 1.0, 2.0]);
        let y = [0.0; 3];
        let w = [1.0; 3];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 3.0, lambda: 0.1, penalize_intercept: false };
        let fit = solve_lasso(&p, &SolverOptions::default()).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn interpolating_least_squares() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = [0.0, 1.0, 2.0];
        let w = [1.0; 3];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 3.0, lambda: 0.0, penalize_intercept: false };
        let fit = solve_lasso(&p, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 1e-8 && (fit.beta[1] - 1.0).abs() < 1e-8, "{:?}", fit.beta);
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let y = [0.0, 1.0, 2.0, 100.0];
        let w = [1.0, 1.0, 1.0, 0.0];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 3.0, lambda: 0.0, penalize_intercept: false };
        let fit = solve_lasso(&p, &SolverOptions::default()).unwrap();
        assert!((fit.beta[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn objective_matches_recomputation() {
        let x = DMatrix::from_fn(20, 4, |i, j| if j == 0 { 1.0 } else { ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0 });
        let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let w = vec![1.0; 20];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 20.0, lambda: 0.05, penalize_intercept: false };
        let fit = solve_lasso(&p, &SolverOptions::default()).unwrap();
        assert!((fit.objective - quad_objective(&p, &fit.beta)).abs() <= 1e-12);
        for pair in fit.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-14);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = [1.0, 2.0];
        let w = [0.0, 0.0];
        let p = QuadProblem { x: &x, y: &y, weights: &w, normalizer: 2.0, lambda: 0.0, penalize_intercept: false };
        assert!(solve_lasso(&p, &SolverOptions::default()).is_err());
        let w = [1.0, 1.0];
        let p = QuadProblem { normalizer: 0.0, weights: &w, ..p };
        assert!(solve_lasso(&p, &SolverOptions::default()).is_err());
    }
}
