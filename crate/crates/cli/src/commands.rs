use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sparsefactor::io::{write_eigen_curve, write_estimate, write_matrix_csv, write_report};
use sparsefactor::panel::PanelData;
use sparsefactor::pca::pca_residual_covariance;
use sparsefactor::poet::{c_max, find_min_positive_c_for, min_eigen_curve_for, CGrid};
use sparsefactor::sim::{generate_dgp_with, monte_carlo, MonteCarloReport, TableSpec};

use crate::config::RunConfig;
use crate::CliError;

/// Creates the output directory and writes the effective config into it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
    fs::write(out.join("effective_config.toml"), cfg.dump()?)
        .map_err(|e| CliError::Input(format!("cannot write config dump: {e}")))?;
    Ok(out)
}

fn read_panel(path: &str, header: bool) -> Result<PanelData, CliError> {
    PanelData::read_csv(Path::new(path), header).map_err(|e| CliError::Input(format!("{path}: {e}")))
}

pub fn estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("estimate needs an input panel (--input)".into()))?;
    let estimator = cfg.estimator(&cfg.method)?;
    let panel = read_panel(input, cfg.header)?;
    let out = prepare_out(cfg)?;
    let fit = estimator.fit(&panel, cfg.r)?;
    let settings = serde_json::to_value(estimator)
        .map_err(|e| CliError::Config(format!("cannot serialize estimator: {e}")))?;
    write_estimate(&out, &fit, estimator.method() == "jointpml", Some(&settings))?;
    let objective = fit
        .objective_trace
        .last()
        .map_or_else(|| "n/a".to_string(), |v| format!("{v:.11e}"));
    println!(
        "method={} r={} iterations={} objective={objective}",
        fit.method, fit.r, fit.iterations
    );
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let truth = generate_dgp_with(cfg.n, cfg.t, cfg.seed, &cfg.dgp())?;
    let out = prepare_out(cfg)?;
    write_matrix_csv(&out.join("panel.csv"), truth.panel.values())?;
    write_matrix_csv(&out.join("loadings0.csv"), &truth.loadings0)?;
    write_matrix_csv(&out.join("factors0.csv"), &truth.factors0)?;
    write_matrix_csv(&out.join("sigma_u0.csv"), &truth.sigma_u0)?;
    println!("T={} N={} seed={} written to {}", cfg.t, cfg.n, cfg.seed, out.display());
    Ok(())
}

fn run_table(cfg: &RunConfig, spec: TableSpec) -> Result<(), CliError> {
    if cfg.reps == 0 {
        return Err(CliError::Config("reps must be at least 1".into()));
    }
    let out = prepare_out(cfg)?;
    let report = monte_carlo(&spec, cfg.reps, cfg.seed, cfg.jobs())?;
    write_report(&out.join("report.csv"), &out.join("report.json"), &report)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &MonteCarloReport) {
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    for row in &report.rows {
        println!(
            "T={:<4} N={:<4} {:<60} loadings={} (se {}) factors={} (se {}) failed={}",
            row.t,
            row.n,
            row.estimator,
            show(row.loadings_mean),
            show(row.loadings_se),
            show(row.factors_mean),
            show(row.factors_se),
            row.failed
        );
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = TableSpec {
        cells: cfg.cell_list()?,
        estimators: cfg.estimators()?,
        dgp: cfg.dgp(),
    };
    run_table(cfg, spec)
}

pub fn replicate_tables(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = TableSpec {
        cells: cfg.cell_list()?,
        estimators: cfg.table_estimators()?,
        dgp: cfg.dgp(),
    };
    run_table(cfg, spec)
}

#[derive(Serialize)]
struct CurveSummary {
    kernel: String,
    c_max: f64,
    c_min: Option<f64>,
    search_error: Option<String>,
    /// Grid points below `c_min` that were already positive definite.
    violations: Vec<f64>,
}

pub fn eigen_curve(cfg: &RunConfig) -> Result<(), CliError> {
    let kernels: Vec<_> = cfg
        .kernels
        .split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(|k| cfg.kernel_named(k).map(|kernel| (k.to_string(), kernel)))
        .collect::<Result<_, _>>()?;
    if kernels.is_empty() {
        return Err(CliError::Config("no kernels requested".into()));
    }
    let adaptive = cfg.adaptive_kind()?;
    if !(cfg.c_step > 0.0) || !(cfg.c_lower >= 0.0) {
        return Err(CliError::Config("need c_step > 0 and c_lower >= 0".into()));
    }
    let panel = match &cfg.input {
        Some(path) => read_panel(path, cfg.header)?,
        None => generate_dgp_with(cfg.n, cfg.t, cfg.seed, &cfg.dgp())?.panel,
    };
    let (n, t) = (panel.n(), panel.t());
    let resid = pca_residual_covariance(&panel, cfg.r)?;
    let cmax = c_max(&resid, adaptive, n, t)?;
    let upper = cfg.c_upper.unwrap_or(cmax);
    if upper < cfg.c_lower {
        return Err(CliError::Config(format!(
            "c_upper {upper} is below c_lower {}",
            cfg.c_lower
        )));
    }
    let mut grid = Vec::new();
    let mut k = 0usize;
    loop {
        let c = cfg.c_lower + k as f64 * cfg.c_step;
        if c >= upper {
            break;
        }
        grid.push(c);
        k += 1;
    }
    grid.push(upper);

    let out = prepare_out(cfg)?;
    let mut summaries = Vec::new();
    for (name, kernel) in kernels {
        let curve = min_eigen_curve_for(&resid, kernel, adaptive, &grid, n, t)?;
        write_eigen_curve(&out.join(format!("curve_{name}.csv")), &curve)?;
        let search_grid = CGrid {
            lower: cfg.c_lower,
            upper: Some(upper),
            step: cfg.c_step,
            ..CGrid::default()
        };
        let summary = match find_min_positive_c_for(&resid, kernel, adaptive, search_grid, n, t) {
            Ok(s) => CurveSummary {
                kernel: name.clone(),
                c_max: cmax,
                c_min: Some(s.c_min),
                search_error: None,
                violations: s.violations,
            },
            Err(e) => CurveSummary {
                kernel: name.clone(),
                c_max: cmax,
                c_min: None,
                search_error: Some(e.to_string()),
                violations: Vec::new(),
            },
        };
        println!(
            "kernel={name} points={} c_min={} c_max={cmax:.6}",
            curve.len(),
            summary.c_min.map_or_else(|| "none".to_string(), |c| format!("{c:.6}"))
        );
        summaries.push(summary);
    }
    let json = serde_json::to_string_pretty(&summaries)
        .map_err(|e| CliError::Config(format!("cannot serialize summary: {e}")))?;
    fs::write(out.join("summary.json"), json)
        .map_err(|e| CliError::Input(format!("cannot write summary: {e}")))?;
    Ok(())
}
