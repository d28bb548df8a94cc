use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty external source")]
    EmptyExternal,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("intercept column must equal 1 (row {row} has {value})")]
    MissingIntercept { row: usize, value: f64 },

    #[error("empty labeled fold (fold {fold})")]
    EmptyLabeledFold { fold: usize },

    #[error("degenerate column {column}")]
    DegenerateColumn { column: usize },

    #[error("unbounded propensity loss")]
    UnboundedPropensity,

    #[error("no external mass in fold {fold}")]
    NoExternalMass { fold: usize },

    #[error("variance unavailable: no second-moment summary")]
    VarianceUnavailable,

    #[error("arm {arm}: {reason}")]
    DegenerateArm { arm: u8, reason: String },

    #[error("cross-validation failed: every fold degenerate")]
    CrossValidation,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bracket failure on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
