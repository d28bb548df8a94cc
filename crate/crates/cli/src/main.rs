use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod checks;
mod commands;
mod error;
mod render;

use error::CliError;

/// Means and treatment effects from labeled primary data plus external
/// covariate summaries.
#[derive(Debug, Parser)]
#[command(name = "summint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reduce external covariate rows to a summary JSON (the only command
    /// that reads individual external rows).
    Summarize(SummarizeArgs),
    /// Estimate a population mean.
    EstimateMean(MeanArgs),
    /// Estimate an average treatment effect.
    EstimateAte(AteArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Run the built-in solver and estimator self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Moments {
    /// Mean, full gram matrix and its diagonal.
    Full,
    /// Mean and gram diagonal only.
    Diag,
    /// Mean only.
    Mean,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// CSV of external covariate rows (`x1..xd`, intercept first).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Second-moment information to include.
    #[arg(long, value_enum, default_value_t = Moments::Full)]
    pub moments: Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Assume {
    Mcar,
    McarPlm,
    Mar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Generalize,
    Transport,
}

/// Inputs and settings shared by the estimation commands.
#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Primary CSV: `y[,a],x1..xd`, one row per labeled unit.
    #[arg(long)]
    pub data: PathBuf,
    /// External summary JSON.
    #[arg(long)]
    pub summary: PathBuf,
    /// Number of external units; must agree with the summary when given.
    #[arg(long)]
    pub n_external: Option<usize>,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: u64,
    /// Fixed penalty level.
    #[arg(long, group = "penalty")]
    pub lambda: Option<f64>,
    /// Comma-separated decreasing penalty grid for cross-validation.
    #[arg(long, group = "penalty", value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Penalty `c · sqrt(log d / n_labeled)` for the given `c`.
    #[arg(long, group = "penalty")]
    pub lambda_theory: Option<f64>,
    /// Folds of the penalty cross-validation.
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    /// Solver tolerance on the KKT residual.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration budget of each solve.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub penalize_intercept: bool,
    /// Cap on inverse-propensity weights.
    #[arg(long)]
    pub clip_weights: Option<f64>,
    /// Fail when no confidence interval can be formed.
    #[arg(long)]
    pub require_ci: bool,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeanArgs {
    #[arg(long, value_enum)]
    pub assume: Assume,
    /// Estimand under `--assume mar` (the whole population or the external units).
    #[arg(long, value_enum)]
    pub target: Option<Target>,
    /// Primary CSV columns holding the nonlinear covariates (`--assume mcar-plm`).
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Option<Vec<String>>,
    /// CSV with the same columns for the external units (`--assume mcar-plm`).
    #[arg(long)]
    pub z_external: Option<PathBuf>,
    /// Fixed ridge penalty on the spline part (`--assume mcar-plm`).
    #[arg(long)]
    pub eta: Option<f64>,
    #[command(flatten)]
    pub common: EstimateArgs,
}

#[derive(Debug, Args)]
pub struct AteArgs {
    #[arg(long, value_enum)]
    pub target: Target,
    #[command(flatten)]
    pub common: EstimateArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Data-generating process: a, b, mcar_linear, mar_wrong_outcome,
    /// mar_wrong_propensity or plm_nonlinear.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 201)]
    pub d: usize,
    #[arg(long, default_value_t = 6)]
    pub s_alpha: usize,
    #[arg(long, default_value_t = 2)]
    pub s_beta: usize,
    /// Target labeled fraction.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub reps: usize,
    /// Comma-separated estimators (mean_mcar, mean_plm, theta_g, theta_t, tau_g, tau_t).
    #[arg(long, value_delimiter = ',', required = true)]
    pub estimators: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    /// Worker threads; the SUMMINT_JOBS environment variable takes precedence.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Covariate draws of the population-truth oracle.
    #[arg(long)]
    pub oracle_draws: Option<usize>,
    /// Covariate draws of the labeling calibration.
    #[arg(long)]
    pub calibration_draws: Option<usize>,
    /// Results JSON.
    #[arg(long, default_value = "sim.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random problem instances per solver.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Summarize(a) => commands::summarize(&a),
        Command::EstimateMean(a) => commands::estimate_mean(&a),
        Command::EstimateAte(a) => commands::estimate_ate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Usage(_) => eprintln!("usage error: {e}"),
                _ => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}
