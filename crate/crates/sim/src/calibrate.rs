//! Choice of the labeling intercept that hits a target labeled fraction.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{Dgp, Model};
use crate::error::{Result, SimError};

pub const CALIBRATION_DRAWS: usize = 1_000_000;
pub const BRACKET: (f64, f64) = (-20.0, 20.0);
const CALIBRATION_SEED: u64 = 0x5eed_ca11_b4a7_e000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha_n: f64,
    /// Monte Carlo labeled fraction at `alpha_n`.
    pub p_hat: f64,
    pub mc_se: f64,
    pub draws: usize,
}

type Key = (Dgp, usize, usize, u64, u64);

fn cache() -> &'static Mutex<HashMap<Key, Calibration>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Calibration>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Bisection on the labeling intercept over [`BRACKET`], with `P(Γ = 1)`
/// estimated from [`CALIBRATION_DRAWS`] common covariate draws (the
/// conditional labeling probability is averaged, not sampled). Results are
/// cached per process, dimension, sparsity and target.
pub fn calibrate_alpha_n(dgp: Dgp, gamma_target: f64, d: usize, s_alpha: usize, tol: f64) -> Result<Calibration> {
    calibrate_with_draws(dgp, gamma_target, d, s_alpha, tol, CALIBRATION_DRAWS)
}

pub fn calibrate_with_draws(
    dgp: Dgp,
    gamma_target: f64,
    d: usize,
    s_alpha: usize,
    tol: f64,
    draws: usize,
) -> Result<Calibration> {
    if !(tol > 0.0) {
        return Err(SimError::Scenario("calibration tolerance must be positive".into()));
    }
    if !(gamma_target > 0.0 && gamma_target < 1.0) {
        return Err(SimError::Scenario(format!("labeled fraction {gamma_target} outside (0, 1)")));
    }
    if !dgp.calibrated() {
        return Ok(Calibration { alpha_n: 0.0, p_hat: gamma_target, mc_se: 0.0, draws: 0 });
    }
    let key = (dgp, d, s_alpha, gamma_target.to_bits(), (tol.to_bits()) ^ draws as u64);
    if let Some(c) = cache().lock().expect("calibration cache").get(&key) {
        return Ok(*c);
    }
    // The labeling mechanisms never read the outcome coefficients.
    let mut model = Model { dgp, d, s_alpha, s_beta: 1, alpha_n: 0.0, gamma: gamma_target };
    let k = s_alpha + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let rows: Vec<Vec<f64>> = (0..draws).map(|_| model.draw_x(&mut rng, k)).collect();
    let estimate = |alpha_n: f64| {
        model.alpha_n = alpha_n;
        let (mut s, mut s2) = (0.0, 0.0);
        for x in &rows {
            let p = model.conditional(x).p_label;
            s += p;
            s2 += p * p;
        }
        let n = rows.len() as f64;
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    };
    let c = bisect_intercept(estimate, gamma_target, tol, draws)?;
    cache().lock().expect("calibration cache").insert(key, c);
    Ok(c)
}

/// Bisection of an increasing labeled-fraction curve `estimate(α) ->
/// (fraction, Monte Carlo se)` over [`BRACKET`].
pub fn bisect_intercept(
    mut estimate: impl FnMut(f64) -> (f64, f64),
    target: f64,
    tol: f64,
    draws: usize,
) -> Result<Calibration> {
    let (mut lo, mut hi) = BRACKET;
    let (p_lo, _) = estimate(lo);
    let (p_hi, _) = estimate(hi);
    if !(p_lo < target && target < p_hi) {
        return Err(SimError::Bracket { lo, hi, target });
    }
    let mut result = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (p, se) = estimate(mid);
        result = Some(Calibration { alpha_n: mid, p_hat: p, mc_se: se, draws });
        if (p - target).abs() <= tol || hi - lo < 1e-12 {
            break;
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(result.expect("at least one bisection step"))
}
