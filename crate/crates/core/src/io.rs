//! File formats: primary CSV (`y,a,x1,...,xd`, one row per labeled unit),
//! external-rows CSV (covariates only, used to build summaries), summary
//! JSON and report JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::{ExternalSummary, PrimaryDataset};
use crate::error::{Error, Result};
use crate::report::EstimateReport;

struct Layout {
    y: Option<usize>,
    a: Option<usize>,
    x: Vec<usize>,
    extra: Vec<usize>,
}

/// Map header names to column roles. Covariates must be named `x1..xd`
/// without gaps; `extra` names are pulled out separately and anything else
/// is rejected.
fn layout(headers: &csv::StringRecord, extra: &[&str]) -> Result<Layout> {
    let mut out = Layout { y: None, a: None, x: Vec::new(), extra: vec![usize::MAX; extra.len()] };
    let mut xs: Vec<(usize, usize)> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        let name = name.trim();
        if let Some(e) = extra.iter().position(|n| *n == name) {
            out.extra[e] = c;
        } else if name == "y" {
            out.y = Some(c);
        } else if name == "a" {
            out.a = Some(c);
        } else if let Some(j) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()).filter(|j| *j >= 1) {
            xs.push((j, c));
        } else {
            return Err(Error::invalid(format!("unexpected column `{name}`")));
        }
    }
    if let Some(e) = out.extra.iter().position(|c| *c == usize::MAX) {
        return Err(Error::invalid(format!("column `{}` not found", extra[e])));
    }
    xs.sort_unstable();
    for (k, (j, _)) in xs.iter().enumerate() {
        if *j != k + 1 {
            return Err(Error::invalid(format!("covariate columns must be x1..xd without gaps; missing x{}", k + 1)));
        }
    }
    if xs.is_empty() {
        return Err(Error::invalid("no covariate columns (expected x1 as the intercept)"));
    }
    out.x = xs.into_iter().map(|(_, c)| c).collect();
    Ok(out)
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    let field = field.trim();
    let v: f64 = field
        .parse()
        .map_err(|_| Error::invalid(format!("row {row}, column `{column}`: cannot parse `{field}` as a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("row {row}, column `{column}`")));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path)?)
}

/// Load the primary CSV. Every row must carry an outcome: unlabeled units
/// may only enter through their summary, counted by `n_external`.
pub fn load_primary_csv(path: impl AsRef<Path>, n_external: usize) -> Result<PrimaryDataset> {
    load_primary_csv_with(path, n_external, &[]).map(|(d, _)| d)
}

/// As [`load_primary_csv`], also returning the named extra columns row by row.
pub fn load_primary_csv_with(
    path: impl AsRef<Path>,
    n_external: usize,
    extra: &[&str],
) -> Result<(PrimaryDataset, Vec<Vec<f64>>)> {
    let mut rdr = reader(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let lay = layout(&headers, extra)?;
    let yc = lay.y.ok_or_else(|| Error::invalid("primary data needs a `y` column"))?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut a = lay.a.map(|_| Vec::new());
    let mut extra_rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let yv = rec.get(yc).unwrap_or("").trim();
        if yv.is_empty() {
            return Err(Error::invalid(format!(
                "row {row} has no outcome; unlabeled units must be supplied as a summary, not as rows"
            )));
        }
        y.push(parse_f64(yv, row, "y")?);
        if let (Some(ac), Some(a)) = (lay.a, a.as_mut()) {
            let v = parse_f64(rec.get(ac).unwrap_or(""), row, "a")?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::invalid(format!("row {row}: treatment must be 0 or 1, found {v}")));
            }
            a.push(v as u8);
        }
        let x = lay
            .x
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_f64(rec.get(c).unwrap_or(""), row, &format!("x{}", j + 1)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(x);
        let e = lay
            .extra
            .iter()
            .zip(extra)
            .map(|(&c, name)| parse_f64(rec.get(c).unwrap_or(""), row, name))
            .collect::<Result<Vec<f64>>>()?;
        extra_rows.push(e);
    }
    let data = PrimaryDataset::from_rows(&rows, y, a, n_external)?;
    Ok((data, extra_rows))
}

/// Write the primary CSV; numbers use the shortest representation that
/// parses back to the same double.
pub fn save_primary_csv(data: &PrimaryDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.dim();
    let mut header = vec!["y".to_string()];
    if data.treatment().is_some() {
        header.push("a".into());
    }
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..data.n_labeled() {
        let mut rec = vec![data.y()[i].to_string()];
        if let Some(a) = data.treatment() {
            rec.push(a[i].to_string());
        }
        rec.extend((0..d).map(|j| data.x()[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Load individual external covariate rows (`x1..xd`, intercept first).
/// An outcome column is refused.
pub fn load_external_rows_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let lay = layout(&headers, &[])?;
    if lay.y.is_some() {
        return Err(Error::invalid("external rows must not carry an outcome column `y`"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let x = lay
            .x
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_f64(rec.get(c).unwrap_or(""), row, &format!("x{}", j + 1)))
            .collect::<Result<Vec<f64>>>()?;
        if x[0] != 1.0 {
            return Err(Error::MissingIntercept { row: i, value: x[0] });
        }
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(Error::EmptyExternal);
    }
    Ok(rows)
}

/// Load the named numeric columns of a CSV (all columns, in file order,
/// when `names` is empty). An outcome column is refused.
pub fn load_columns_csv(path: impl AsRef<Path>, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    if headers.iter().any(|h| h.trim() == "y") {
        return Err(Error::invalid("external rows must not carry an outcome column `y`"));
    }
    let cols: Vec<(usize, String)> = if names.is_empty() {
        headers.iter().enumerate().map(|(c, h)| (c, h.trim().to_string())).collect()
    } else {
        names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h.trim() == *n)
                    .map(|c| (c, n.to_string()))
                    .ok_or_else(|| Error::invalid(format!("column `{n}` not found")))
            })
            .collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(
            cols.iter()
                .map(|(c, name)| parse_f64(rec.get(*c).unwrap_or(""), i + 1, name))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(rows)
}

pub fn load_summary_json(path: impl AsRef<Path>) -> Result<ExternalSummary> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_summary_json(summary: &ExternalSummary, path: impl AsRef<Path>) -> Result<()> {
    save_json(summary, path)
}

pub fn load_report_json(path: impl AsRef<Path>) -> Result<EstimateReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_report_json(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    save_json(report, path)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
