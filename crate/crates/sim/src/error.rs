use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("calibration bracket [{lo}, {hi}] does not contain the target labeled fraction {target}")]
    Bracket { lo: f64, hi: f64, target: f64 },

    #[error("{estimand}: {failed} of {reps} replications failed (budget 5%); first error: {first}")]
    FailureBudget { estimand: String, failed: usize, reps: usize, first: String },

    #[error("thread pool: {0}")]
    Pool(String),

    #[error(transparent)]
    Core(#[from] summint_core::Error),
}
