//! Monte Carlo study of the summint estimators: data-generating processes,
//! labeling calibration, population-truth oracles and a parallel
//! replication runner with median-based metrics.

pub mod calibrate;
pub mod dgp;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod runner;

pub use calibrate::{calibrate_alpha_n, Calibration};
pub use dgp::{Dgp, Model};
pub use error::{Result, SimError};
pub use oracle::{truth, Truth};
pub use runner::{run_replications, RepRecord, Scenario, SimResult};
