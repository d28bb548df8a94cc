//! Scenario definition and the replication loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use summint_core::causal::{estimate_ate_generalize, estimate_ate_transport};
use summint_core::mar::fit_nuisances;
use summint_core::mcar::estimate_mean_mcar;
use summint_core::plm::{estimate_mean_plm, PlmOptions};
use summint_core::{EstimateReport, Estimand, EstimatorConfig, VarianceSource};

use crate::calibrate::{calibrate_with_draws, Calibration, CALIBRATION_DRAWS};
use crate::dgp::{Dgp, Model, Replicate};
use crate::error::{Result, SimError};
use crate::metrics::{summarize, EstimatorSummary, Outcome};
use crate::oracle::{truth, Truth, ORACLE_DRAWS};

/// Largest tolerated share of failed replications per estimator.
pub const FAILURE_BUDGET: f64 = 0.05;

fn default_oracle_draws() -> usize {
    ORACLE_DRAWS
}

fn default_calibration_draws() -> usize {
    CALIBRATION_DRAWS
}

fn default_calibration_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dgp: Dgp,
    pub n: usize,
    pub d: usize,
    pub s_alpha: usize,
    pub s_beta: usize,
    /// Target labeled fraction.
    pub gamma: f64,
    pub reps: usize,
    pub estimators: Vec<Estimand>,
    pub seed: u64,
    /// Estimator settings; the seed is replaced per replication.
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub plm: PlmOptions,
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
    #[serde(default = "default_calibration_tol")]
    pub calibration_tol: f64,
}

impl Scenario {
    /// Scenario with default estimator settings and oracle sizes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dgp: Dgp,
        n: usize,
        d: usize,
        s_alpha: usize,
        s_beta: usize,
        gamma: f64,
        reps: usize,
        estimators: Vec<Estimand>,
        seed: u64,
    ) -> Self {
        Scenario {
            dgp,
            n,
            d,
            s_alpha,
            s_beta,
            gamma,
            reps,
            estimators,
            seed,
            estimator: EstimatorConfig::default(),
            plm: PlmOptions::default(),
            oracle_draws: ORACLE_DRAWS,
            calibration_draws: CALIBRATION_DRAWS,
            calibration_tol: default_calibration_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.n == 0 {
            return Err(SimError::Scenario("reps and n must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(SimError::Scenario("no estimators requested".into()));
        }
        for e in &self.estimators {
            let ok = match e {
                Estimand::TauG | Estimand::TauT => self.dgp.has_treatment(),
                Estimand::MeanPlm => self.dgp.has_z(),
                Estimand::MeanMcar | Estimand::ThetaG | Estimand::ThetaT => !self.dgp.has_treatment(),
            };
            if !ok {
                return Err(SimError::Scenario(format!("estimator {} does not apply to process {}", e.as_str(), self.dgp)));
            }
        }
        Ok(())
    }

    fn model(&self, alpha_n: f64) -> Model {
        Model { dgp: self.dgp, d: self.d, s_alpha: self.s_alpha, s_beta: self.s_beta, alpha_n, gamma: self.gamma }
    }
}

/// One estimator's result in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: Estimand,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub variance: Option<f64>,
    pub variance_source: Option<VarianceSource>,
    pub n_labeled: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: Scenario,
    pub model: Model,
    pub calibration: Calibration,
    pub truth: Truth,
    /// How the population values were obtained.
    pub truth_source: String,
    pub notes: Vec<String>,
    pub summaries: Vec<EstimatorSummary>,
    pub replications: Vec<RepRecord>,
}

impl SimResult {
    pub fn summary(&self, estimator: Estimand) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep`, a function of `(seed, rep)` only.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    splitmix(seed ^ splitmix(rep as u64))
}

fn record(rep: usize, estimator: Estimand, r: std::result::Result<EstimateReport, String>) -> RepRecord {
    match r {
        Ok(r) => RepRecord {
            rep,
            estimator,
            point: Some(r.point),
            se: r.se,
            ci: r.ci,
            variance: r.variance,
            variance_source: r.diagnostics.variance_source,
            n_labeled: Some(r.n_labeled),
            error: None,
        },
        Err(e) => RepRecord {
            rep,
            estimator,
            point: None,
            se: None,
            ci: None,
            variance: None,
            variance_source: None,
            n_labeled: None,
            error: Some(e),
        },
    }
}

/// Run every requested estimator on one replicate.
fn estimate_all(
    rep: usize,
    sample: &Replicate,
    estimators: &[Estimand],
    cfg: &EstimatorConfig,
    plm: &PlmOptions,
) -> Vec<RepRecord> {
    let (data, summary) = (&sample.data, &sample.summary);
    let needs_mar = estimators.iter().any(|e| matches!(e, Estimand::ThetaG | Estimand::ThetaT));
    let mar = needs_mar.then(|| fit_nuisances(data, summary, cfg).map_err(|e| e.to_string()));
    estimators
        .iter()
        .map(|&e| {
            let r = match e {
                Estimand::MeanMcar => match &sample.plm {
                    // Compare against the linear fit on (x, z).
                    Some(p) => estimate_mean_mcar(&p.linear, &p.linear_summary, cfg).map(|f| f.report),
                    None => estimate_mean_mcar(data, summary, cfg).map(|f| f.report),
                }
                .map_err(|e| e.to_string()),
                Estimand::MeanPlm => match &sample.plm {
                    Some(p) => estimate_mean_plm(&p.data, summary, cfg, plm).map(|f| f.report).map_err(|e| e.to_string()),
                    None => Err("process has no z block".to_string()),
                },
                Estimand::ThetaG => match mar.as_ref().expect("fitted above") {
                    Ok(fit) => fit.report_g(data, summary, cfg).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                },
                Estimand::ThetaT => match mar.as_ref().expect("fitted above") {
                    Ok(fit) => fit.report_t(data, summary, cfg).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                },
                Estimand::TauG => estimate_ate_generalize(data, summary, cfg).map_err(|e| e.to_string()),
                Estimand::TauT => estimate_ate_transport(data, summary, cfg).map_err(|e| e.to_string()),
            };
            record(rep, e, r)
        })
        .collect()
}

/// Calibrate, compute the truth, and run all replications on the current
/// rayon pool. Results do not depend on the number of threads.
pub fn run_replications(scenario: &Scenario) -> Result<SimResult> {
    scenario.validate()?;
    let calibration = calibrate_with_draws(
        scenario.dgp,
        scenario.gamma,
        scenario.d,
        scenario.s_alpha,
        scenario.calibration_tol,
        scenario.calibration_draws,
    )?;
    let model = scenario.model(calibration.alpha_n);
    model.validate()?;
    let truth = truth(&model, scenario.oracle_draws);

    let per_rep: Vec<Vec<RepRecord>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(scenario.seed, rep);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = EstimatorConfig { seed: splitmix(seed), ..scenario.estimator.clone() };
            match model.generate(&mut rng, scenario.n) {
                Ok(sample) => estimate_all(rep, &sample, &scenario.estimators, &cfg, &scenario.plm),
                Err(e) => scenario.estimators.iter().map(|&est| record(rep, est, Err(e.to_string()))).collect(),
            }
        })
        .collect();
    let replications: Vec<RepRecord> = per_rep.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for &est in &scenario.estimators {
        let mine: Vec<&RepRecord> = replications.iter().filter(|r| r.estimator == est).collect();
        let failed: Vec<&&RepRecord> = mine.iter().filter(|r| r.point.is_none()).collect();
        if failed.len() as f64 > FAILURE_BUDGET * scenario.reps as f64 {
            return Err(SimError::FailureBudget {
                estimand: est.as_str().into(),
                failed: failed.len(),
                reps: scenario.reps,
                first: failed[0].error.clone().unwrap_or_default(),
            });
        }
        let outcomes: Vec<Outcome> = mine
            .iter()
            .filter_map(|r| r.point.map(|point| Outcome { point, ci: r.ci, variance: r.variance }))
            .collect();
        summaries.push(summarize(est, truth.of(est), &outcomes, failed.len()));
    }

    let mut notes = Vec::new();
    if scenario.dgp == Dgp::A {
        notes.push("treatment probability is 0.3 sin(x2) + 0.5, with x2 the first non-intercept covariate".into());
    }
    Ok(SimResult {
        scenario: scenario.clone(),
        model,
        calibration,
        truth,
        truth_source: format!("monte carlo oracle, {} covariate draws", scenario.oracle_draws),
        notes,
        summaries,
        replications,
    })
}

/// [`run_replications`] on a dedicated pool of `jobs` threads.
pub fn run_replications_with_jobs(scenario: &Scenario, jobs: usize) -> Result<SimResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    pool.install(|| run_replications(scenario))
}
