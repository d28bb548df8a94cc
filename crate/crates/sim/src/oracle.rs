//! Population values of every estimand by large Monte Carlo draws of the
//! covariates, averaging conditional expectations.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use summint_core::Estimand;

use crate::dgp::Model;

pub const ORACLE_DRAWS: usize = 10_000_000;
const ORACLE_SEED: u64 = 0x0a0c_1e5e_ed00_0001;

/// Population targets with their Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// `E[Y]`.
    pub theta_g: f64,
    /// `E[Y | Γ = 0]`.
    pub theta_t: f64,
    /// `E[Y(1) − Y(0)]`.
    pub tau_g: f64,
    /// `E[Y(1) − Y(0) | Γ = 0]`.
    pub tau_t: f64,
    /// `P(Γ = 1)`.
    pub p_label: f64,
    pub mc_se_theta_g: f64,
    pub mc_se_tau_g: f64,
    pub draws: usize,
}

impl Truth {
    pub fn of(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::MeanMcar | Estimand::MeanPlm | Estimand::ThetaG => self.theta_g,
            Estimand::ThetaT => self.theta_t,
            Estimand::TauG => self.tau_g,
            Estimand::TauT => self.tau_t,
        }
    }
}

type Key = (String, usize);

fn cache() -> &'static Mutex<HashMap<Key, Truth>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Truth>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Truth for `model` from `draws` covariate draws (cached per model).
pub fn truth(model: &Model, draws: usize) -> Truth {
    let key = (serde_json::to_string(model).expect("model serializes"), draws);
    if let Some(t) = cache().lock().expect("oracle cache").get(&key) {
        return *t;
    }
    let k = model.relevant_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let mut sums = [0.0f64; 7];
    for _ in 0..draws {
        let x = model.draw_x(&mut rng, k);
        let c = model.conditional(&x);
        let un = 1.0 - c.p_label;
        sums[0] += c.mean_y;
        sums[1] += c.mean_y * c.mean_y;
        sums[2] += un * c.mean_y_unlabeled;
        sums[3] += un;
        sums[4] += c.effect;
        sums[5] += c.effect * c.effect;
        sums[6] += un * c.effect;
    }
    let n = draws as f64;
    let se = |s: f64, s2: f64| ((s2 / n - (s / n).powi(2)).max(0.0) / n).sqrt();
    let t = Truth {
        theta_g: sums[0] / n,
        theta_t: sums[2] / sums[3],
        tau_g: sums[4] / n,
        tau_t: sums[6] / sums[3],
        p_label: 1.0 - sums[3] / n,
        mc_se_theta_g: se(sums[0], sums[1]),
        mc_se_tau_g: se(sums[4], sums[5]),
        draws,
    };
    cache().lock().expect("oracle cache").insert(key, t);
    t
}
