use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or conflicting arguments.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] summint_core::Error),

    #[error(transparent)]
    Sim(#[from] summint_sim::SimError),

    /// One or more self-checks failed.
    #[error("{0} check(s) failed")]
    Checks(usize),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
