use super::{col, dot, is_penalized, kkt_violation, l1_penalty, soft_threshold, PenalizedFit, SolverOptions, TiltProblem};
use crate::error::{Error, Result};

/// Exponent arguments are clamped to `[-EXP_CLAMP, EXP_CLAMP]` when evaluating.
pub const EXP_CLAMP: f64 = 700.0;

#[inline]
fn exp_neg(eta: f64, clamped: &mut bool) -> f64 {
    let a = -eta;
    if a > EXP_CLAMP {
        *clamped = true;
        EXP_CLAMP.exp()
    } else if a < -EXP_CLAMP {
        *clamped = true;
        (-EXP_CLAMP).exp()
    } else {
        a.exp()
    }
}

fn validate(p: &TiltProblem<'_>) -> Result<()> {
    if p.linear.len() != p.x.ncols() {
        return Err(Error::Dimension { expected: p.x.ncols(), found: p.linear.len() });
    }
    if p.linear.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tilt linear term".into()));
    }
    if !(p.normalizer > 0.0 && p.normalizer.is_finite()) {
        return Err(Error::invalid("normalizer must be positive"));
    }
    if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be finite and nonnegative"));
    }
    Ok(())
}

fn linear_predictor(p: &TiltProblem<'_>, alpha: &[f64]) -> Vec<f64> {
    let mut eta = vec![0.0; p.x.nrows()];
    for (j, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for (e, xv) in eta.iter_mut().zip(col(p.x, j)) {
                *e += a * xv;
            }
        }
    }
    eta
}

/// Full objective `vᵀα + N⁻¹ Σ exp(−xᵢᵀα) + λ‖α_pen‖₁` (clamped exponentials).
pub fn tilt_objective(p: &TiltProblem<'_>, alpha: &[f64]) -> f64 {
    let mut clamped = false;
    let eta = linear_predictor(p, alpha);
    let expsum: f64 = eta.iter().map(|&e| exp_neg(e, &mut clamped)).sum();
    dot(p.linear, alpha) + expsum / p.normalizer + l1_penalty(alpha, p.lambda, p.penalize_intercept)
}

/// Gradient of the smooth part, `v − N⁻¹ Σ exp(−xᵢᵀα) xᵢ`.
pub fn tilt_gradient(p: &TiltProblem<'_>, alpha: &[f64]) -> Vec<f64> {
    let mut clamped = false;
    let eta = linear_predictor(p, alpha);
    let e: Vec<f64> = eta.iter().map(|&v| exp_neg(v, &mut clamped)).collect();
    (0..p.x.ncols()).map(|j| p.linear[j] - dot(col(p.x, j), &e) / p.normalizer).collect()
}

/// Coordinate directions along which the objective decreases forever.
fn has_escape_direction(p: &TiltProblem<'_>) -> bool {
    for j in 0..p.x.ncols() {
        let xj = col(p.x, j);
        let pen = if is_penalized(j, p.penalize_intercept) { p.lambda } else { 0.0 };
        let all_pos = xj.iter().all(|v| *v > 0.0);
        let all_nonneg = xj.iter().all(|v| *v >= 0.0);
        let all_neg = xj.iter().all(|v| *v < 0.0);
        let all_nonpos = xj.iter().all(|v| *v <= 0.0);
        let up = p.linear[j] + pen;
        let down = -p.linear[j] + pen;
        if (up < 0.0 && all_nonneg) || (up <= 0.0 && all_pos) || (down < 0.0 && all_nonpos) || (down <= 0.0 && all_neg)
        {
            return true;
        }
    }
    false
}

pub fn solve_tilt(p: &TiltProblem<'_>, opts: &SolverOptions) -> Result<PenalizedFit> {
    solve_tilt_warm(p, opts, None)
}

struct Tilt<'a, 'p> {
    p: &'a TiltProblem<'p>,
    n: usize,
    penalized: Vec<bool>,
    clamped: bool,
}

impl Tilt<'_, '_> {
    fn eta(&self, coords: &[usize], vals: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n];
        for (&j, &a) in coords.iter().zip(vals) {
            if a != 0.0 {
                for (e, xv) in eta.iter_mut().zip(col(self.p.x, j)) {
                    *e += a * xv;
                }
            }
        }
        eta
    }

    fn smooth(&mut self, coords: &[usize], vals: &[f64], eta: &[f64]) -> f64 {
        let lin: f64 = coords.iter().zip(vals).map(|(&j, &a)| self.p.linear[j] * a).sum();
        let mut clamped = false;
        let s: f64 = eta.iter().map(|&e| exp_neg(e, &mut clamped)).sum();
        self.clamped |= clamped;
        lin + s / self.p.normalizer
    }

    fn gradient(&mut self, coords: &[usize], eta: &[f64]) -> Vec<f64> {
        let mut clamped = false;
        let e: Vec<f64> = eta.iter().map(|&v| exp_neg(v, &mut clamped)).collect();
        self.clamped |= clamped;
        coords.iter().map(|&j| self.p.linear[j] - dot(col(self.p.x, j), &e) / self.p.normalizer).collect()
    }

    fn penalty(&self, coords: &[usize], vals: &[f64]) -> f64 {
        coords.iter().zip(vals).filter(|(&j, _)| self.penalized[j]).map(|(_, a)| a.abs()).sum::<f64>() * self.p.lambda
    }

    fn kkt(&self, coords: &[usize], vals: &[f64], grad: &[f64]) -> f64 {
        coords
            .iter()
            .zip(vals)
            .zip(grad)
            .map(|((&j, &a), &g)| kkt_violation(g, a, self.p.lambda, self.penalized[j]))
            .fold(0.0, f64::max)
    }

    /// Monotone accelerated proximal gradient restricted to `coords`.
    /// Returns whether the restricted KKT residual reached `tol`; `false` means
    /// the step budget ran out or progress stalled at roundoff level.
    fn restricted(
        &mut self,
        coords: &[usize],
        x: &mut Vec<f64>,
        lip: &mut f64,
        steps: &mut usize,
        trace: &mut Vec<f64>,
        opts: &SolverOptions,
    ) -> Result<bool> {
        let lambda = self.p.lambda;
        let mut eta_x = self.eta(coords, x);
        let mut f_x = self.smooth(coords, x, &eta_x);
        let mut g_x = self.gradient(coords, &eta_x);
        let mut obj_x = f_x + self.penalty(coords, x);
        // Momentum point; `None` means it coincides with x.
        let mut y: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut t = 1.0f64;

        loop {
            if y.is_none() && self.kkt(coords, x, &g_x) <= opts.tol {
                return Ok(true);
            }
            if *steps >= opts.max_prox_steps {
                return Ok(false);
            }
            let (yv, f_y, g_y) = match &y {
                None => (x.clone(), f_x, g_x.clone()),
                Some((yv, eta_y)) => {
                    let f_y = self.smooth(coords, yv, eta_y);
                    let g_y = self.gradient(coords, eta_y);
                    (yv.clone(), f_y, g_y)
                }
            };

            *lip = (*lip * 0.9).max(1e-12);
            let (z, eta_z, f_z, g_z) = loop {
                let step = 1.0 / *lip;
                let z: Vec<f64> = coords
                    .iter()
                    .zip(yv.iter().zip(&g_y))
                    .map(|(&j, (&yj, &gj))| {
                        let u = yj - step * gj;
                        if self.penalized[j] {
                            soft_threshold(u, lambda * step)
                        } else {
                            u
                        }
                    })
                    .collect();
                let eta_z = self.eta(coords, &z);
                let f_z = self.smooth(coords, &z, &eta_z);
                let g_z = self.gradient(coords, &eta_z);
                let (mut lin, mut sq, mut curv) = (0.0, 0.0, 0.0);
                for k in 0..z.len() {
                    let diff = z[k] - yv[k];
                    lin += g_y[k] * diff;
                    sq += diff * diff;
                    curv += (g_z[k] - g_y[k]) * diff;
                }
                let bound = f_y + lin + 0.5 * *lip * sq;
                // Function values carry roundoff of order eps·|f|; when the
                // predicted change is below that, test curvature via gradients.
                let noise = 1e-12 * f_y.abs().max(1.0);
                let ok = if f_z.is_finite() {
                    f_z <= bound || ((f_z - bound).abs() <= noise && curv <= *lip * sq)
                } else {
                    false
                };
                if ok || sq == 0.0 {
                    break (z, eta_z, f_z, g_z);
                }
                *lip *= 2.0;
                if !lip.is_finite() || *lip > 1e300 {
                    return Err(Error::NonFinite("tilt step size".into()));
                }
            };
            *steps += 1;

            let obj_z = f_z + self.penalty(coords, &z);
            let plain = y.is_none();
            if obj_z <= obj_x {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let momentum = (t - 1.0) / t_next;
                y = if momentum > 0.0 {
                    let yv: Vec<f64> = z.iter().zip(x.iter()).map(|(zk, xk)| zk + momentum * (zk - xk)).collect();
                    let ey: Vec<f64> = eta_z.iter().zip(&eta_x).map(|(ez, ex)| ez + momentum * (ez - ex)).collect();
                    Some((yv, ey))
                } else {
                    None
                };
                *x = z;
                eta_x = eta_z;
                f_x = f_z;
                g_x = g_z;
                obj_x = obj_z;
                t = t_next;
            } else if plain {
                // A plain proximal step failed to decrease the objective, which
                // only happens at roundoff level near the optimum. Keep the step
                // if it improves stationarity, otherwise stop.
                if self.kkt(coords, &z, &g_z) < self.kkt(coords, x, &g_x) {
                    *x = z;
                    eta_x = eta_z;
                    f_x = f_z;
                    g_x = g_z;
                    obj_x = obj_z;
                    t = 1.0;
                } else {
                    trace.push(obj_x);
                    return Ok(false);
                }
            } else {
                // Restart from the incumbent.
                y = None;
                t = 1.0;
            }
            trace.push(obj_x);

            if x.iter().any(|v| v.abs() > opts.divergence_bound) {
                return Err(Error::UnboundedPropensity);
            }
            if self.kkt(coords, x, &g_x) <= opts.tol {
                return Ok(true);
            }
        }
    }
}

/// Proximal gradient with backtracking over a growing working set.
///
/// The working set starts from the unpenalized coordinates and the warm
/// start's support; coordinates violating the full KKT conditions are added
/// until the full residual is below `opts.tol`.
pub fn solve_tilt_warm(p: &TiltProblem<'_>, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<PenalizedFit> {
    validate(p)?;
    let n = p.x.nrows();
    let d = p.x.ncols();
    let penalized: Vec<bool> = (0..d).map(|j| is_penalized(j, p.penalize_intercept)).collect();

    if n == 0 {
        let bounded = (0..d).all(|j| {
            if penalized[j] {
                p.linear[j].abs() <= p.lambda
            } else {
                p.linear[j] == 0.0
            }
        });
        if !bounded {
            return Err(Error::UnboundedPropensity);
        }
    } else if has_escape_direction(p) {
        return Err(Error::UnboundedPropensity);
    }

    let mut alpha = match warm {
        Some(w) if w.len() == d => w.to_vec(),
        Some(w) => return Err(Error::Dimension { expected: d, found: w.len() }),
        None => {
            let mut a = vec![0.0; d];
            // Intercept-only stationary point as a cold start.
            if n > 0 && !penalized[0] && p.linear[0] > 0.0 && col(p.x, 0).iter().all(|v| *v == 1.0) {
                a[0] = (n as f64 / (p.normalizer * p.linear[0])).ln();
            }
            a
        }
    };

    let mut work = Tilt { p, n, penalized: penalized.clone(), clamped: false };
    let mut working: Vec<usize> = (0..d).filter(|&j| !penalized[j] || alpha[j] != 0.0).collect();
    let mut trace = vec![tilt_objective(p, &alpha)];
    let mut steps = 0usize;
    let mut lip = {
        // Trace bound on the Hessian at the start point.
        let eta = linear_predictor(p, &alpha);
        let mut c = false;
        let h: f64 = (0..n)
            .map(|i| exp_neg(eta[i], &mut c) * (0..d).map(|j| p.x[(i, j)].powi(2)).sum::<f64>())
            .sum::<f64>()
            / p.normalizer;
        (h / d.max(1) as f64).max(1e-6)
    };
    let all: Vec<usize> = (0..d).collect();
    let mut converged = false;
    let mut stalled = false;
    let mut residual;

    loop {
        let eta = work.eta(&all, &alpha);
        let grad = work.gradient(&all, &eta);
        residual = work.kkt(&all, &alpha, &grad);
        if residual <= opts.tol {
            converged = true;
            break;
        }
        if steps >= opts.max_prox_steps || stalled {
            break;
        }
        let before = working.len();
        for j in 0..d {
            if penalized[j] && alpha[j] == 0.0 && grad[j].abs() > p.lambda && !working.contains(&j) {
                working.push(j);
            }
        }
        working.sort_unstable();
        let added = working.len() > before;

        let mut vals: Vec<f64> = working.iter().map(|&j| alpha[j]).collect();
        let steps_before = steps;
        let progressing = work.restricted(&working, &mut vals, &mut lip, &mut steps, &mut trace, opts)?;
        for (&j, &v) in working.iter().zip(&vals) {
            alpha[j] = v;
        }
        stalled = !progressing && !added;
        if !added && steps == steps_before {
            // Restricted problem solved but the full residual is stuck above tol.
            break;
        }
        // Drop coordinates that left the support.
        working.retain(|&j| !penalized[j] || alpha[j] != 0.0);
    }

    if let Some(i) = alpha.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tilt coefficient {i}")));
    }
    let objective = tilt_objective(p, &alpha);
    Ok(PenalizedFit {
        support: PenalizedFit::support_of(&alpha),
        beta: alpha,
        lambda: p.lambda,
        objective,
        kkt_residual: residual,
        iterations: steps,
        converged,
        clamped: work.clamped,
        trace,
    })
}
