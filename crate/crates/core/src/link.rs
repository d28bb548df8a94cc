//! Logistic link and the inverse-propensity weights derived from it.

/// `g(t) = eᵗ / (1 + eᵗ)`, evaluated without overflow.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Odds weight `exp(−t) = (1 − g(t)) / g(t)`.
pub fn odds_weight(t: f64) -> f64 {
    (-t).exp()
}

/// Inverse propensity `1 / g(t) = 1 + exp(−t)`.
pub fn inverse_logistic(t: f64) -> f64 {
    1.0 + odds_weight(t)
}

/// `logit(p) = log(p / (1 − p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_agree_with_link() {
        for t in [-30.0, -5.0, -0.3, 0.0, 0.7, 5.0, 30.0] {
            let g = logistic(t);
            assert!((inverse_logistic(t) - 1.0 / g).abs() <= 1e-12 * inverse_logistic(t));
            if t < 20.0 {
                assert!((odds_weight(t) - (1.0 - g) / g).abs() <= 1e-9 * odds_weight(t).max(1.0));
            }
        }
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logit(logistic(0.4)) - 0.4).abs() < 1e-12);
    }
}
