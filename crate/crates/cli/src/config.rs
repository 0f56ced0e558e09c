use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sparsefactor::jointpml::{JointOptions, PenaltyKind, PenaltySpec, WeightMode};
use sparsefactor::poet::{AdaptiveKind, Kernel, ThresholdRule};
use sparsefactor::sim::{DgpConfig, EstimatorConfig};
use sparsefactor::twostep::TwoStepOptions;

use crate::CliError;

pub const TABLE_CELLS: &str = "50x50,50x100,50x150,100x50,100x100,100x150";
pub const TABLE_JOINT_GRID: &str = "1:0.08,1:0.3,5:0.08,5:0.3";

/// Every key that any command reads. Config files use these names; flags use the same
/// names with dashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub header: bool,
    pub out: String,
    pub method: String,
    pub methods: String,
    pub r: usize,
    pub kernel: String,
    pub kernels: String,
    pub scad_a: f64,
    pub adaptive: String,
    pub c: f64,
    pub penalty: String,
    pub gamma: f64,
    pub mu: f64,
    pub delta: f64,
    pub weights: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub joint_grid: String,
    pub max_iter: usize,
    pub tol: f64,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub cells: String,
    pub n: usize,
    pub t: usize,
    pub coef_sd: f64,
    pub noise_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
    pub c_lower: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_upper: Option<f64>,
    pub c_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            input: None,
            header: false,
            out: "out".into(),
            method: "twostep".into(),
            methods: "pca,dml,twostep,jointpml".into(),
            r: 2,
            kernel: "scad".into(),
            kernels: "hard,scad".into(),
            scad_a: 3.7,
            adaptive: "correlation".into(),
            c: 1.0,
            penalty: "adaptive_lasso".into(),
            gamma: 1.0,
            mu: 0.08,
            delta: 0.0,
            weights: "fixed".into(),
            step: None,
            joint_grid: TABLE_JOINT_GRID.into(),
            max_iter: 500,
            tol: 1e-6,
            max_outer: 10,
            outer_tol: 1e-6,
            max_inner: 500,
            inner_tol: 1e-8,
            reps: 200,
            seed: 2024,
            jobs: 0,
            cells: TABLE_CELLS.into(),
            n: 150,
            t: 100,
            coef_sd: 0.7,
            noise_scale: 1.0,
            design_seed: None,
            c_lower: 0.0,
            c_upper: None,
            c_step: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn dump(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn jobs(&self) -> Option<usize> {
        (self.jobs > 0).then_some(self.jobs)
    }

    pub fn kernel_named(&self, name: &str) -> Result<Kernel, CliError> {
        let kernel = match name.trim() {
            "hard" => Kernel::Hard,
            "soft" => Kernel::Soft,
            "scad" => Kernel::Scad { a: self.scad_a },
            other => return Err(CliError::Config(format!("unknown kernel '{other}'"))),
        };
        kernel.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(kernel)
    }

    pub fn adaptive_kind(&self) -> Result<AdaptiveKind, CliError> {
        match self.adaptive.as_str() {
            "universal" => Ok(AdaptiveKind::Universal),
            "correlation" => Ok(AdaptiveKind::Correlation),
            other => Err(CliError::Config(format!("unknown adaptive rule '{other}'"))),
        }
    }

    pub fn threshold_rule(&self) -> Result<ThresholdRule, CliError> {
        ThresholdRule::new(self.kernel_named(&self.kernel)?, self.adaptive_kind()?, self.c)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    fn penalty_with(&self, gamma: f64, mu: f64) -> Result<PenaltySpec, CliError> {
        let kind = match self.penalty.as_str() {
            "lasso" => PenaltyKind::Lasso,
            "adaptive_lasso" => PenaltyKind::AdaptiveLasso {
                gamma,
                delta_t: self.delta,
            },
            "scad" => PenaltyKind::Scad { a: self.scad_a },
            other => return Err(CliError::Config(format!("unknown penalty '{other}'"))),
        };
        let weights = match self.weights.as_str() {
            "fixed" => WeightMode::Fixed,
            "iterative" => WeightMode::Iterative,
            other => return Err(CliError::Config(format!("unknown weight mode '{other}'"))),
        };
        let spec = PenaltySpec {
            kind,
            mu_t: mu,
            step_t: self.step,
            weights,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn joint_options(&self) -> JointOptions {
        JointOptions {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn twostep_options(&self) -> TwoStepOptions {
        TwoStepOptions {
            max_outer: self.max_outer,
            outer_tol: self.outer_tol,
            max_inner: self.max_inner,
            inner_tol: self.inner_tol,
        }
    }

    pub fn estimator(&self, method: &str) -> Result<EstimatorConfig, CliError> {
        Ok(match method.trim() {
            "pca" => EstimatorConfig::Pca,
            "dml" => EstimatorConfig::Dml {
                options: self.joint_options(),
            },
            "twostep" => EstimatorConfig::Twostep {
                rule: self.threshold_rule()?,
                options: self.twostep_options(),
            },
            "jointpml" => EstimatorConfig::Jointpml {
                penalty: self.penalty_with(self.gamma, self.mu)?,
                options: self.joint_options(),
            },
            other => return Err(CliError::Config(format!("unknown method '{other}'"))),
        })
    }

    pub fn estimators(&self) -> Result<Vec<EstimatorConfig>, CliError> {
        list(&self.methods).map(|m| self.estimator(m)).collect()
    }

    /// PCA, DML, two-step, and one joint estimator per `gamma:mu` pair of `joint_grid`.
    pub fn table_estimators(&self) -> Result<Vec<EstimatorConfig>, CliError> {
        let mut out = vec![
            self.estimator("pca")?,
            self.estimator("dml")?,
            self.estimator("twostep")?,
        ];
        for pair in list(&self.joint_grid) {
            let (g, m) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("joint grid entry '{pair}' is not gamma:mu")))?;
            out.push(EstimatorConfig::Jointpml {
                penalty: self.penalty_with(parse_num(g, "gamma")?, parse_num(m, "mu")?)?,
                options: self.joint_options(),
            });
        }
        Ok(out)
    }

    pub fn cell_list(&self) -> Result<Vec<(usize, usize)>, CliError> {
        list(&self.cells)
            .map(|cell| {
                let (t, n) = cell
                    .split_once('x')
                    .ok_or_else(|| CliError::Config(format!("cell '{cell}' is not TxN")))?;
                Ok((parse_num(t, "T")?, parse_num(n, "N")?))
            })
            .collect()
    }

    pub fn dgp(&self) -> DgpConfig {
        DgpConfig {
            coef_sd: self.coef_sd,
            noise_scale: self.noise_scale,
            design_seed: self.design_seed,
            ..DgpConfig::default()
        }
    }
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("invalid {what} '{s}'")))
}
