//! Mean and average treatment effect estimation from individual primary
//! data combined with covariate summaries of external sources.

pub mod causal;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod link;
pub mod mar;
pub mod mcar;
pub mod optim;
pub mod plm;
pub mod report;
pub mod spline;
pub mod verify;

pub use config::EstimatorConfig;
pub use data::{make_folds, summarize_external, ExternalSummary, FoldPlan, PrimaryDataset, UnitGroup};
pub use error::{Error, Result};
pub use report::{Diagnostics, EstimateReport, Estimand, VarianceSource};
