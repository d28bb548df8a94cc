use std::path::Path;

use summint_core::causal::{estimate_ate_generalize, estimate_ate_transport};
use summint_core::io::{
    load_columns_csv, load_external_rows_csv, load_primary_csv, load_primary_csv_with, load_summary_json,
    save_json, save_report_json,
};
use summint_core::mar::{estimate_theta_g, estimate_theta_t};
use summint_core::mcar::estimate_mean_mcar;
use summint_core::optim::{LambdaRule, SolverOptions};
use summint_core::plm::{estimate_mean_plm, PlmDataset, PlmOptions};
use summint_core::{summarize_external, EstimateReport, Estimand, EstimatorConfig, ExternalSummary, PrimaryDataset};
use summint_sim::runner::run_replications_with_jobs;
use summint_sim::{Dgp, Scenario};

use crate::error::{CliError, Result};
use crate::{checks, render};
use crate::{AteArgs, Assume, EstimateArgs, MeanArgs, Moments, SimulateArgs, SummarizeArgs, Target, VerifyArgs};

/// Environment variable that overrides `simulate --jobs`.
pub const JOBS_ENV: &str = "SUMMINT_JOBS";

pub fn summarize(args: &SummarizeArgs) -> Result<String> {
    let rows = load_external_rows_csv(&args.data)?;
    let full = summarize_external(&rows)?;
    let summary = match args.moments {
        Moments::Full => full,
        Moments::Diag => full.diagonal_only(),
        Moments::Mean => full.first_moment_only(),
    };
    match &args.out {
        Some(path) => {
            save_json(&summary, path)?;
            Ok(render::summary(&summary, path))
        }
        None => Ok(to_pretty_json(&summary)?),
    }
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(summint_core::Error::from)?;
    text.push('\n');
    Ok(text)
}

fn positive_finite(v: f64, flag: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::usage(format!("{flag} must be positive and finite, got {v}")))
    }
}

/// Translate the shared flags into an estimator configuration.
fn config(a: &EstimateArgs) -> Result<EstimatorConfig> {
    if a.folds < 2 {
        return Err(CliError::usage(format!("--folds must be at least 2, got {}", a.folds)));
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::usage(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let lambda = if let Some(l) = a.lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(CliError::usage(format!("--lambda must be non-negative and finite, got {l}")));
        }
        LambdaRule::Fixed(l)
    } else if let Some(c) = a.lambda_theory {
        LambdaRule::Theory(positive_finite(c, "--lambda-theory")?)
    } else {
        if a.cv_folds < 2 {
            return Err(CliError::usage(format!("--cv-folds must be at least 2, got {}", a.cv_folds)));
        }
        let grid = match &a.lambda_grid {
            Some(g) => {
                if g.is_empty() {
                    return Err(CliError::usage("--lambda-grid is empty"));
                }
                for &v in g {
                    positive_finite(v, "--lambda-grid entries")?;
                }
                Some(g.clone())
            }
            None => None,
        };
        LambdaRule::Cv { folds: a.cv_folds, grid }
    };
    let mut solver = SolverOptions::default();
    if let Some(tol) = a.tol {
        solver.tol = positive_finite(tol, "--tol")?;
    }
    if let Some(m) = a.max_iter {
        if m == 0 {
            return Err(CliError::usage("--max-iter must be positive"));
        }
        solver.max_sweeps = m;
        solver.max_prox_steps = m;
    }
    if let Some(c) = a.clip_weights {
        if !(c.is_finite() && c >= 1.0) {
            return Err(CliError::usage(format!("--clip-weights must be at least 1, got {c}")));
        }
    }
    Ok(EstimatorConfig {
        folds: a.folds,
        level: a.level,
        seed: a.seed,
        lambda,
        lambda_propensity: None,
        solver,
        penalize_intercept: a.penalize_intercept,
        clip_weights: a.clip_weights,
        require_ci: a.require_ci,
    })
}

/// Load the summary and check `--n-external` against it.
fn load_summary(a: &EstimateArgs) -> Result<ExternalSummary> {
    let summary = load_summary_json(&a.summary)?;
    if let Some(n) = a.n_external {
        if n != summary.n_external() {
            return Err(CliError::usage(format!(
                "--n-external {n} disagrees with the summary, which counts {} external units",
                summary.n_external()
            )));
        }
    }
    Ok(summary)
}

fn finish(report: &EstimateReport, out: Option<&Path>) -> Result<String> {
    if let Some(path) = out {
        save_report_json(report, path)?;
    }
    Ok(render::report(report, out))
}

pub fn estimate_mean(args: &MeanArgs) -> Result<String> {
    let a = &args.common;
    let mut conflicts = Vec::new();
    if args.assume != Assume::Mar && args.target == Some(Target::Transport) {
        conflicts.push(format!("--assume {} cannot be combined with --target transport", assume_name(args.assume)));
    }
    if args.assume != Assume::McarPlm {
        for (given, flag) in
            [(args.z_cols.is_some(), "--z-cols"), (args.z_external.is_some(), "--z-external"), (args.eta.is_some(), "--eta")]
        {
            if given {
                conflicts.push(format!("{flag} requires --assume mcar-plm"));
            }
        }
    }
    if args.assume == Assume::Mar && args.target.is_none() {
        conflicts.push("--assume mar requires --target generalize|transport".into());
    }
    if args.assume == Assume::McarPlm && (args.z_cols.is_none() || args.z_external.is_none()) {
        conflicts.push("--assume mcar-plm requires both --z-cols and --z-external".into());
    }
    if !conflicts.is_empty() {
        return Err(CliError::usage(conflicts.join("; ")));
    }

    let cfg = config(a)?;
    let summary = load_summary(a)?;
    let report = match args.assume {
        Assume::Mcar => {
            let data = load_primary_csv(&a.data, summary.n_external())?;
            estimate_mean_mcar(&data, &summary, &cfg)?.report
        }
        Assume::McarPlm => {
            let names: Vec<&str> = args.z_cols.iter().flatten().map(String::as_str).collect();
            if names.is_empty() {
                return Err(CliError::usage("--z-cols lists no columns"));
            }
            let eta = args.eta.map(|e| positive_finite(e, "--eta")).transpose()?;
            let (base, z_labeled) = load_primary_csv_with(&a.data, summary.n_external(), &names)?;
            let z_path = args.z_external.as_ref().expect("checked above");
            let z_external = load_columns_csv(z_path, &names)?;
            let data = PlmDataset::new(base, z_labeled, z_external)?;
            let opts = PlmOptions { eta, ..PlmOptions::default() };
            estimate_mean_plm(&data, &summary, &cfg, &opts)?.report
        }
        Assume::Mar => {
            let data = load_primary_csv(&a.data, summary.n_external())?;
            match args.target.expect("checked above") {
                Target::Generalize => estimate_theta_g(&data, &summary, &cfg)?,
                Target::Transport => estimate_theta_t(&data, &summary, &cfg)?,
            }
        }
    };
    finish(&report, a.out.as_deref())
}

fn assume_name(a: Assume) -> &'static str {
    match a {
        Assume::Mcar => "mcar",
        Assume::McarPlm => "mcar-plm",
        Assume::Mar => "mar",
    }
}

pub fn estimate_ate(args: &AteArgs) -> Result<String> {
    let a = &args.common;
    let cfg = config(a)?;
    let summary = load_summary(a)?;
    let data: PrimaryDataset = load_primary_csv(&a.data, summary.n_external())?;
    if data.treatment().is_none() {
        return Err(CliError::usage("estimate-ate needs a treatment column `a` in --data"));
    }
    let report = match args.target {
        Target::Generalize => estimate_ate_generalize(&data, &summary, &cfg)?,
        Target::Transport => estimate_ate_transport(&data, &summary, &cfg)?,
    };
    finish(&report, a.out.as_deref())
}

/// Worker count: `SUMMINT_JOBS` when set, else `--jobs`, else all cores.
fn jobs(flag: Option<usize>) -> Result<usize> {
    let n = match std::env::var(JOBS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("{JOBS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => match flag {
            Some(j) => j,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::usage("the number of jobs must be positive"));
    }
    Ok(n)
}

pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let dgp: Dgp = args.dgp.parse().map_err(|e: summint_sim::SimError| CliError::usage(e.to_string()))?;
    let estimators = args
        .estimators
        .iter()
        .map(|s| s.trim().parse::<Estimand>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut scenario =
        Scenario::new(dgp, args.n, args.d, args.s_alpha, args.s_beta, args.gamma, args.reps, estimators, args.seed);
    if let Some(d) = args.oracle_draws {
        scenario.oracle_draws = d;
    }
    if let Some(d) = args.calibration_draws {
        scenario.calibration_draws = d;
    }
    scenario.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let result = run_replications_with_jobs(&scenario, jobs(args.jobs)?)?;
    save_json(&result, &args.out)?;
    Ok(render::simulation(&result, &args.out))
}

pub fn verify(args: &VerifyArgs) -> Result<String> {
    if args.instances == 0 {
        return Err(CliError::usage("--instances must be positive"));
    }
    let results = checks::run_all(args.seed, args.instances);
    let text = render::checks(&results);
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        print!("{text}");
        return Err(CliError::Checks(failed));
    }
    Ok(text)
}
