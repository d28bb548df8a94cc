//! Plain-text reports printed to stdout.

use std::fmt::Write;
use std::path::Path;

use summint_core::{EstimateReport, ExternalSummary, VarianceSource};
use summint_sim::SimResult;

use crate::checks::CheckResult;

fn source_name(s: Option<VarianceSource>) -> &'static str {
    match s {
        Some(VarianceSource::ExternalGram) => "external gram",
        Some(VarianceSource::ConservativeDiag) => "conservative (gram diagonal)",
        Some(VarianceSource::PrimaryOnly) => "primary data only",
        None => "unavailable",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

pub fn report(r: &EstimateReport, out: Option<&Path>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "estimand         {}", r.estimand.as_str());
    let _ = writeln!(s, "point            {:.6}", r.point);
    let _ = writeln!(s, "standard error   {}", opt(r.se));
    let ci = r.ci.map_or_else(|| "not available".into(), |(lo, hi)| format!("[{lo:.6}, {hi:.6}]"));
    let _ = writeln!(s, "{:<17}{ci}", format!("{:.0}% interval", 100.0 * r.level));
    let _ = writeln!(s, "variance source  {}", source_name(r.diagnostics.variance_source));
    let _ = writeln!(s, "units            {} total, {} labeled", r.n, r.n_labeled);
    if let Some(arms) = r.arms {
        let _ = writeln!(s, "arm means        treated {:.6}, control {:.6}", arms.treated, arms.control);
    }
    if !r.diagnostics.nuisances.is_empty() {
        let _ = writeln!(s, "\nnuisance fits");
        let _ = writeln!(s, "  {:>4}  {:<12} {:>3}  {:>10}  {:>7}  {:>6}  converged", "fold", "role", "arm", "lambda", "support", "iters");
        for n in &r.diagnostics.nuisances {
            let arm = n.arm.map_or_else(|| "-".into(), |a| a.to_string());
            let _ = writeln!(
                s,
                "  {:>4}  {:<12} {:>3}  {:>10.3e}  {:>7}  {:>6}  {}{}",
                n.fold,
                n.role,
                arm,
                n.lambda,
                n.support_size,
                n.iterations,
                if n.converged { "yes" } else { "no" },
                if n.clamped { " (clamped)" } else { "" }
            );
        }
    }
    if !r.diagnostics.warnings.is_empty() {
        let _ = writeln!(s, "\nwarnings");
        for w in &r.diagnostics.warnings {
            let _ = writeln!(s, "  - {w}");
        }
    }
    if let Some(path) = out {
        let _ = writeln!(s, "\nreport written to {}", path.display());
    }
    s
}

pub fn summary(sum: &ExternalSummary, path: &Path) -> String {
    let moments = match (sum.gram().is_some(), sum.gram_diag().is_some()) {
        (true, _) => "mean and gram",
        (false, true) => "mean and gram diagonal",
        _ => "mean only",
    };
    format!(
        "summarized {} external units over {} covariates ({moments}) into {}\n",
        sum.n_external(),
        sum.dim(),
        path.display()
    )
}

pub fn simulation(r: &SimResult, path: &Path) -> String {
    let sc = &r.scenario;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "process {}  n {}  d {}  labeled fraction {} (calibrated intercept {:.4})  reps {}  seed {}",
        sc.dgp, sc.n, sc.d, sc.gamma, r.calibration.alpha_n, sc.reps, sc.seed
    );
    let _ = writeln!(
        s,
        "\n{:<9} {:>10} {:>10} {:>10} {:>10} {:>9} {:>8}",
        "estimator", "truth", "bias", "rmse_med", "length", "coverage", "failed"
    );
    for e in &r.summaries {
        let _ = writeln!(
            s,
            "{:<9} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>9} {:>8}",
            e.estimator.as_str(),
            e.truth,
            e.bias,
            e.rmse_med,
            e.length.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
            e.coverage.map_or_else(|| "-".into(), |v| format!("{v:.3}")),
            e.failed
        );
    }
    for note in &r.notes {
        let _ = writeln!(s, "\nnote: {note}");
    }
    let _ = writeln!(s, "\nresults written to {}", path.display());
    s
}

pub fn checks(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for c in results {
        let _ = writeln!(s, "{:<31} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "\n{} of {} checks passed", results.len() - failed, results.len());
    s
}
