//! `sparsefactor` command-line interface.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical or solver failure, 4 config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
        }
    }
}

impl From<sparsefactor::Error> for CliError {
    fn from(e: sparsefactor::Error) -> Self {
        use sparsefactor::Error as E;
        match &e {
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            E::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sparsefactor",
    version,
    about = "Regularized ML estimation of approximate factor models",
    after_help = "Keys in a --config TOML file match the flag names with '_' for '-'. \
                  Precedence: flag, then config file, then default."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an estimator to a CSV panel (rows = time, columns = series)
    Estimate(EstimateArgs),
    /// Draw one panel from the banded simulation design
    Generate(GenerateArgs),
    /// Monte Carlo over chosen cells and methods
    Simulate(SimulateArgs),
    /// Monte Carlo over the table grid with the table hyperparameters
    ReplicateTables(TablesArgs),
    /// Smallest eigenvalue of the thresholded covariance over a grid of C
    EigenCurve(EigenArgs),
}

#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ThresholdFlags {
    /// Thresholding kernel: hard, soft or scad [default: scad]
    #[arg(long)]
    kernel: Option<String>,
    /// SCAD shape parameter a [default: 3.7]
    #[arg(long)]
    scad_a: Option<f64>,
    /// Threshold scaling: universal or correlation [default: correlation]
    #[arg(long)]
    adaptive: Option<String>,
    /// Threshold constant C [default: 1]
    #[arg(long = "c", visible_alias = "C")]
    c: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct EstimatorFlags {
    /// Number of factors [default: 2]
    #[arg(long)]
    r: Option<usize>,
    #[command(flatten)]
    threshold: ThresholdFlags,
    /// Joint penalty: lasso, adaptive_lasso or scad [default: adaptive_lasso]
    #[arg(long)]
    penalty: Option<String>,
    /// Adaptive-lasso exponent gamma [default: 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// Penalty level mu_T [default: 0.08]
    #[arg(long)]
    mu: Option<f64>,
    /// Adaptive-lasso offset delta_T [default: 0]
    #[arg(long)]
    delta: Option<f64>,
    /// Penalty weights: fixed (from PCA residuals) or iterative [default: fixed]
    #[arg(long)]
    weights: Option<String>,
    /// MM step size t [default: 0.1 x smallest PCA residual variance]
    #[arg(long)]
    step: Option<f64>,
    /// Joint and DML iteration cap [default: 500]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Joint and DML relative objective tolerance [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    /// Two-step outer iteration cap [default: 10]
    #[arg(long)]
    max_outer: Option<usize>,
    /// Two-step outer relative tolerance [default: 1e-6]
    #[arg(long)]
    outer_tol: Option<f64>,
    /// Two-step inner EM iteration cap [default: 500]
    #[arg(long)]
    max_inner: Option<usize>,
    /// Two-step inner EM relative tolerance [default: 1e-8]
    #[arg(long)]
    inner_tol: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct DgpFlags {
    /// Standard deviation of the MA coefficients [default: 0.7]
    #[arg(long)]
    coef_sd: Option<f64>,
    /// Scale of the idiosyncratic innovations [default: 1]
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Fix the design (coefficients, loadings) across replications [default: redraw]
    #[arg(long)]
    design_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct McFlags {
    /// Replications per cell [default: 200]
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed [default: 2024]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores [default: 0]
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated TxN cells [default: 50x50,50x100,50x150,100x50,100x100,100x150]
    #[arg(long)]
    cells: Option<String>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Panel CSV [default: none, required]
    #[arg(long)]
    input: Option<String>,
    /// Panel CSV has a header row [default: false]
    #[arg(long)]
    header: bool,
    /// Estimator: pca, dml, twostep or jointpml [default: twostep]
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    est: EstimatorFlags,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Cross-section size N [default: 150]
    #[arg(long)]
    n: Option<usize>,
    /// Time dimension T [default: 100]
    #[arg(long)]
    t: Option<usize>,
    /// Seed of the draw [default: 2024]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dgp: DgpFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Comma-separated methods [default: pca,dml,twostep,jointpml]
    #[arg(long)]
    methods: Option<String>,
    #[command(flatten)]
    mc: McFlags,
    #[command(flatten)]
    est: EstimatorFlags,
    #[command(flatten)]
    dgp: DgpFlags,
}

#[derive(Args, Debug)]
struct TablesArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Joint estimators as comma-separated gamma:mu pairs [default: 1:0.08,1:0.3,5:0.08,5:0.3]
    #[arg(long)]
    joint_grid: Option<String>,
    #[command(flatten)]
    mc: McFlags,
    #[command(flatten)]
    est: EstimatorFlags,
    #[command(flatten)]
    dgp: DgpFlags,
}

#[derive(Args, Debug)]
struct EigenArgs {
    #[command(flatten)]
    common: CommonFlags,
    /// Panel CSV; without it a design panel is drawn from --n, --t, --seed [default: none]
    #[arg(long)]
    input: Option<String>,
    /// Panel CSV has a header row [default: false]
    #[arg(long)]
    header: bool,
    /// Number of factors [default: 2]
    #[arg(long)]
    r: Option<usize>,
    /// Comma-separated kernels [default: hard,scad]
    #[arg(long)]
    kernels: Option<String>,
    /// SCAD shape parameter a [default: 3.7]
    #[arg(long)]
    scad_a: Option<f64>,
    /// Threshold scaling: universal or correlation [default: correlation]
    #[arg(long)]
    adaptive: Option<String>,
    /// First grid point [default: 0]
    #[arg(long)]
    c_lower: Option<f64>,
    /// Last grid point [default: C_max]
    #[arg(long)]
    c_upper: Option<f64>,
    /// Grid spacing [default: 0.05]
    #[arg(long)]
    c_step: Option<f64>,
    /// Cross-section size N of the drawn panel [default: 150]
    #[arg(long)]
    n: Option<usize>,
    /// Time dimension T of the drawn panel [default: 100]
    #[arg(long)]
    t: Option<usize>,
    /// Seed of the drawn panel [default: 2024]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dgp: DgpFlags,
}

macro_rules! overlay {
    ($cfg:expr, $flags:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $flags.$field.clone() { $cfg.$field = v; } )*
    };
}

macro_rules! overlay_opt {
    ($cfg:expr, $flags:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $flags.$field.clone() { $cfg.$field = Some(v); } )*
    };
}

fn base(common: &CommonFlags, command: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.command = command.into();
    overlay!(cfg, common; out);
    Ok(cfg)
}

fn apply_estimator(cfg: &mut RunConfig, f: &EstimatorFlags) {
    overlay!(cfg, f; r, penalty, gamma, mu, delta, weights, max_iter, tol, max_outer,
        outer_tol, max_inner, inner_tol);
    overlay!(cfg, f.threshold; kernel, scad_a, adaptive, c);
    overlay_opt!(cfg, f; step);
}

fn apply_dgp(cfg: &mut RunConfig, f: &DgpFlags) {
    overlay!(cfg, f; coef_sd, noise_scale);
    overlay_opt!(cfg, f; design_seed);
}

fn apply_mc(cfg: &mut RunConfig, f: &McFlags) {
    overlay!(cfg, f; reps, seed, jobs, cells);
}

fn resolve(command: &Command) -> Result<RunConfig, CliError> {
    Ok(match command {
        Command::Estimate(a) => {
            let mut cfg = base(&a.common, "estimate")?;
            overlay_opt!(cfg, a; input);
            cfg.header |= a.header;
            overlay!(cfg, a; method);
            apply_estimator(&mut cfg, &a.est);
            cfg
        }
        Command::Generate(a) => {
            let mut cfg = base(&a.common, "generate")?;
            overlay!(cfg, a; n, t, seed);
            apply_dgp(&mut cfg, &a.dgp);
            cfg
        }
        Command::Simulate(a) => {
            let mut cfg = base(&a.common, "simulate")?;
            overlay!(cfg, a; methods);
            apply_mc(&mut cfg, &a.mc);
            apply_estimator(&mut cfg, &a.est);
            apply_dgp(&mut cfg, &a.dgp);
            cfg
        }
        Command::ReplicateTables(a) => {
            let mut cfg = base(&a.common, "replicate-tables")?;
            overlay!(cfg, a; joint_grid);
            apply_mc(&mut cfg, &a.mc);
            apply_estimator(&mut cfg, &a.est);
            apply_dgp(&mut cfg, &a.dgp);
            cfg
        }
        Command::EigenCurve(a) => {
            let mut cfg = base(&a.common, "eigen-curve")?;
            overlay_opt!(cfg, a; input, c_upper);
            cfg.header |= a.header;
            overlay!(cfg, a; r, kernels, scad_a, adaptive, c_lower, c_step, n, t, seed);
            apply_dgp(&mut cfg, &a.dgp);
            cfg
        }
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.command)?;
    match cli.command {
        Command::Estimate(_) => commands::estimate(&cfg),
        Command::Generate(_) => commands::generate(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::ReplicateTables(_) => commands::replicate_tables(&cfg),
        Command::EigenCurve(_) => commands::eigen_curve(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sparsefactor: {e}");
            ExitCode::from(e.code())
        }
    }
}
