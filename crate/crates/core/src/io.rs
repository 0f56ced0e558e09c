//! CSV and JSON writers for estimates, reports and eigenvalue curves.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::linalg::Mat;
use crate::sim::MonteCarloReport;
use crate::twostep::FactorEstimate;

/// Formats with 12 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format_value(m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateMetadata<'a> {
    method: &'a str,
    r: usize,
    t: usize,
    n: usize,
    iterations: usize,
    outer_iterations: usize,
    converged: bool,
    tied_identification: bool,
    final_objective: Option<f64>,
    /// Largest absolute column sum of `Sigma_u`; monitored, not constrained.
    sigma_u_norm1: f64,
    objective_trace: &'a [f64],
    segment_starts: &'a [usize],
}

/// Writes `loadings.csv`, `factors.csv`, `sigma_u.csv` and `metadata.json` into `dir`,
/// plus `support.csv` (0/1 off-diagonal support of `Sigma_u`) when `with_support`.
pub fn write_estimate(
    dir: &Path,
    estimate: &FactorEstimate,
    with_support: bool,
    extra: Option<&serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("loadings.csv"), &estimate.loadings)?;
    write_matrix_csv(&dir.join("factors.csv"), &estimate.factors)?;
    write_matrix_csv(&dir.join("sigma_u.csv"), &estimate.sigma_u)?;
    if with_support {
        let support = estimate
            .sigma_u
            .map_with_location(|i, j, v| if i != j && v != 0.0 { 1.0 } else { 0.0 });
        let mut w = csv::Writer::from_path(dir.join("support.csv"))?;
        for i in 0..support.nrows() {
            w.write_record((0..support.ncols()).map(|j| format!("{}", support[(i, j)] as u8)))?;
        }
        w.flush()?;
    }
    let meta = EstimateMetadata {
        method: &estimate.method,
        r: estimate.r,
        t: estimate.factors.nrows(),
        n: estimate.loadings.nrows(),
        iterations: estimate.iterations,
        outer_iterations: estimate.outer_iterations,
        converged: estimate.converged,
        tied_identification: estimate.tied_identification,
        final_objective: estimate.objective_trace.last().copied(),
        sigma_u_norm1: estimate
            .sigma_u
            .column_iter()
            .map(|c| c.abs().sum())
            .fold(0.0, f64::max),
        objective_trace: &estimate.objective_trace,
        segment_starts: &estimate.segment_starts,
    };
    let mut value = serde_json::to_value(&meta)?;
    if let (Some(extra), Some(obj)) = (extra, value.as_object_mut()) {
        obj.insert("config".into(), extra.clone());
    }
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

/// Writes the aggregated table as CSV and the full report (with per-replication records)
/// as JSON.
pub fn write_report(csv_path: &Path, json_path: &Path, report: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record([
        "T",
        "N",
        "method",
        "estimator",
        "reps",
        "failed",
        "loadings_mean",
        "loadings_se",
        "factors_mean",
        "factors_se",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.t.to_string(),
            row.n.to_string(),
            row.method.clone(),
            row.estimator.clone(),
            row.reps.to_string(),
            row.failed.to_string(),
            opt(row.loadings_mean),
            opt(row.loadings_se),
            opt(row.factors_mean),
            opt(row.factors_se),
        ])?;
    }
    w.flush()?;
    fs::write(json_path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn write_eigen_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["C", "lambda_min"])?;
    for &(c, l) in curve {
        w.write_record([format_value(c), format_value(l)])?;
    }
    w.flush()?;
    Ok(())
}
