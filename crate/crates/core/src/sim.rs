//! Simulation design with banded moving-average idiosyncratic errors, seeded Monte Carlo
//! replication, and report aggregation.
//!
//! Seeds: the replication with index `k` under master seed `m` uses the first output of a
//! ChaCha8 generator seeded with `m` on stream `k`. A DGP draw seeded with `s` takes its
//! design (`a, b, c`, loadings) from stream 1 and its data (factors, innovations) from
//! stream 2 of a ChaCha8 generator seeded with `s`, so a fixed design can be paired with
//! fresh data.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointpml::{dml_estimate, joint_estimate, JointOptions, PenaltySpec};
use crate::linalg::{self, Mat};
use crate::panel::{smallest_canonical_correlation, PanelData};
use crate::pca::{pca_estimate, pca_residual_covariance};
use crate::poet::{
    find_min_positive_c_for, threshold_covariance, AdaptiveKind, CGrid, Kernel, ThresholdRule,
};
use crate::twostep::{identify_rotate, twostep_estimate, FactorEstimate, TwoStepOptions};

/// Number of factors in the simulation design.
pub const DGP_FACTORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Standard deviation of the moving-average coefficients `a_i, b_i, c_i`.
    pub coef_sd: f64,
    /// Scale applied to the idiosyncratic innovations; 0 gives a noiseless panel.
    pub noise_scale: f64,
    /// Draw `(a, b, c, Lambda_0)` from this seed instead of the replication seed.
    pub design_seed: Option<u64>,
    /// Center the factors and rescale them so that `F'F/T = I` exactly.
    pub normalize_factors: bool,
    /// Rotate `Lambda_0` so that `Lambda_0' Sigma_u0^-1 Lambda_0` is diagonal, decreasing.
    pub identify_loadings: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            coef_sd: 0.7,
            noise_scale: 1.0,
            design_seed: None,
            normalize_factors: false,
            identify_loadings: false,
        }
    }
}

/// One draw of the simulation design together with its ground truth.
#[derive(Debug, Clone)]
pub struct DgpTruth {
    pub panel: PanelData,
    pub loadings0: Mat,
    pub factors0: Mat,
    pub sigma_u0: Mat,
    /// Moving-average coefficients `a_i`, `b_i`, `c_i` (0-based).
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub seed: u64,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Seed of replication `index` under `master_seed`.
pub fn replication_seed(master_seed: u64, index: u64) -> u64 {
    rng_stream(master_seed, index).next_u64()
}

/// Lower-banded moving-average matrix `Psi` with `u_t = Psi e_t`.
pub fn ma_matrix(a: &[f64], b: &[f64], c: &[f64]) -> Mat {
    let n = a.len();
    Mat::from_fn(n, n, |k, j| match k as isize - j as isize {
        0 => 1.0,
        1 => a[j],
        2 => b[j],
        3 => c[j],
        _ => 0.0,
    })
}

pub fn generate_dgp(n: usize, t: usize, seed: u64) -> Result<DgpTruth> {
    generate_dgp_with(n, t, seed, &DgpConfig::default())
}

pub fn generate_dgp_with(n: usize, t: usize, seed: u64, config: &DgpConfig) -> Result<DgpTruth> {
    if n < 4 {
        return Err(Error::Parameter(format!("the design needs N >= 4, got {n}")));
    }
    if t < 2 {
        return Err(Error::Parameter(format!("the design needs T >= 2, got {t}")));
    }
    let mut design = rng_stream(config.design_seed.unwrap_or(seed), 1);
    let draw_coefs = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| config.coef_sd * normal(rng)).collect()
    };
    let a = draw_coefs(&mut design);
    let b = draw_coefs(&mut design);
    let c = draw_coefs(&mut design);
    let mut loadings0 = Mat::from_fn(n, DGP_FACTORS, |_, _| design.random::<f64>());

    let psi = ma_matrix(&a, &b, &c);
    let sigma_u0 = &psi * psi.transpose() * (config.noise_scale * config.noise_scale);

    let mut data = rng_stream(seed, 2);
    let mut factors0 = Mat::from_fn(t, DGP_FACTORS, |_, _| normal(&mut data));
    let innovations = Mat::from_fn(t, n, |_, _| normal(&mut data));
    let u = innovations * psi.transpose() * config.noise_scale;

    if config.normalize_factors {
        for mut col in factors0.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let gram = factors0.tr_mul(&factors0) / t as f64;
        let chol = linalg::cholesky(&gram, "factor second moment")?;
        let l_inv_t = chol
            .l()
            .solve_lower_triangular(&Mat::identity(DGP_FACTORS, DGP_FACTORS))
            .ok_or_else(|| Error::Singular("factor second moment".into()))?
            .transpose();
        factors0 = factors0 * l_inv_t;
    }
    if config.identify_loadings {
        loadings0 = identify_rotate(&loadings0, &sigma_u0)?.loadings;
    }

    let y = &factors0 * loadings0.transpose() + u;
    Ok(DgpTruth {
        panel: PanelData::new(y)?,
        loadings0,
        factors0,
        sigma_u0,
        a,
        b,
        c,
        seed,
    })
}

/// An estimator and its hyperparameters, as run by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Pca,
    Dml {
        options: JointOptions,
    },
    Twostep {
        rule: ThresholdRule,
        options: TwoStepOptions,
    },
    Jointpml {
        penalty: PenaltySpec,
        options: JointOptions,
    },
}

impl EstimatorConfig {
    pub fn method(&self) -> &'static str {
        match self {
            EstimatorConfig::Pca => "pca",
            EstimatorConfig::Dml { .. } => "dml",
            EstimatorConfig::Twostep { .. } => "twostep",
            EstimatorConfig::Jointpml { .. } => "jointpml",
        }
    }

    /// Short hyperparameter description used as a report key.
    pub fn label(&self) -> String {
        match self {
            EstimatorConfig::Pca => "pca".into(),
            EstimatorConfig::Dml { .. } => "dml".into(),
            EstimatorConfig::Twostep { rule, .. } => format!(
                "twostep(kernel={},adaptive={},C={})",
                rule.kernel.name(),
                rule.adaptive.name(),
                rule.c
            ),
            EstimatorConfig::Jointpml { penalty, .. } => {
                use crate::jointpml::PenaltyKind;
                let kind = match penalty.kind {
                    PenaltyKind::Lasso => "lasso".to_string(),
                    PenaltyKind::AdaptiveLasso { gamma, delta_t } => {
                        format!("adaptive_lasso,gamma={gamma},delta={delta_t}")
                    }
                    PenaltyKind::Scad { a } => format!("scad,a={a}"),
                };
                format!("jointpml({kind},mu={},weights={:?})", penalty.mu_t, penalty.weights)
            }
        }
    }

    pub fn fit(&self, panel: &PanelData, r: usize) -> Result<FactorEstimate> {
        match self {
            EstimatorConfig::Pca => {
                let fit = pca_estimate(panel, r)?;
                Ok(FactorEstimate {
                    method: "pca".into(),
                    loadings: fit.loadings,
                    factors: fit.factors,
                    sigma_u: fit.residual_cov,
                    r,
                    objective_trace: Vec::new(),
                    segment_starts: Vec::new(),
                    iterations: 0,
                    outer_iterations: 0,
                    converged: true,
                    tied_identification: false,
                })
            }
            EstimatorConfig::Dml { options } => dml_estimate(panel, r, options),
            EstimatorConfig::Twostep { rule, options } => twostep_estimate(panel, r, rule, options),
            EstimatorConfig::Jointpml { penalty, options } => {
                joint_estimate(panel, r, penalty, options)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: u64,
    pub seed: u64,
    pub t: usize,
    pub n: usize,
    pub estimator: String,
    pub loadings_cc: Option<f64>,
    pub factors_cc: Option<f64>,
    pub iterations: usize,
    pub final_objective: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Factor means are absorbed by the intercept, so estimated factors are compared with the
/// demeaned truth.
fn centered_columns(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Fits one estimator to a DGP draw and scores it by smallest canonical correlations.
pub fn evaluate(truth: &DgpTruth, config: &EstimatorConfig, index: u64) -> ReplicationRecord {
    let mut record = ReplicationRecord {
        index,
        seed: truth.seed,
        t: truth.panel.t(),
        n: truth.panel.n(),
        estimator: config.label(),
        loadings_cc: None,
        factors_cc: None,
        iterations: 0,
        final_objective: None,
        error: None,
    };
    let scored = config.fit(&truth.panel, truth.loadings0.ncols()).and_then(|fit| {
        let l = smallest_canonical_correlation(&fit.loadings, &truth.loadings0)?;
        let f = smallest_canonical_correlation(&fit.factors, &centered_columns(&truth.factors0))?;
        Ok((fit, l, f))
    });
    match scored {
        Ok((fit, l, f)) => {
            record.loadings_cc = Some(l);
            record.factors_cc = Some(f);
            record.iterations = fit.iterations;
            record.final_objective = fit.objective_trace.last().copied();
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

pub fn run_replication(
    n: usize,
    t: usize,
    seed: u64,
    config: &EstimatorConfig,
    dgp: &DgpConfig,
) -> Result<ReplicationRecord> {
    let truth = generate_dgp_with(n, t, seed, dgp)?;
    Ok(evaluate(&truth, config, 0))
}

/// Grid of `(T, N)` cells crossed with estimator configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub cells: Vec<(usize, usize)>,
    pub estimators: Vec<EstimatorConfig>,
    pub dgp: DgpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub n: usize,
    pub estimator: String,
    pub method: String,
    pub reps: usize,
    pub failed: usize,
    /// Every replication of the cell failed; means and standard errors are absent.
    pub all_failed: bool,
    pub loadings_mean: Option<f64>,
    pub loadings_se: Option<f64>,
    pub factors_mean: Option<f64>,
    pub factors_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub master_seed: u64,
    pub reps: usize,
    pub spec: TableSpec,
    pub rows: Vec<ReportRow>,
    pub replications: Vec<ReplicationRecord>,
}

impl MonteCarloReport {
    pub fn row(&self, t: usize, n: usize, method: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.t == t && r.n == n && r.method == method)
    }
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (Some(mean), Some((var / k).sqrt()))
}

/// Runs every estimator on `reps` DGP draws per cell. All estimators in a cell see the
/// same draws. `jobs` caps the worker threads; results do not depend on it.
pub fn monte_carlo(
    spec: &TableSpec,
    reps: usize,
    master_seed: u64,
    jobs: Option<usize>,
) -> Result<MonteCarloReport> {
    if reps == 0 {
        return Err(Error::Parameter("reps must be at least 1".into()));
    }
    if spec.cells.is_empty() || spec.estimators.is_empty() {
        return Err(Error::Parameter("table needs at least one cell and one estimator".into()));
    }
    for &(t, n) in &spec.cells {
        if n < 4 || t < 2 {
            return Err(Error::Parameter(format!("invalid cell T={t}, N={n}")));
        }
    }
    let tasks: Vec<(usize, u64)> = (0..spec.cells.len())
        .flat_map(|c| (0..reps as u64).map(move |k| (c, k)))
        .collect();
    let work = || -> Vec<Vec<ReplicationRecord>> {
        tasks
            .par_iter()
            .map(|&(cell, k)| {
                let (t, n) = spec.cells[cell];
                let seed = replication_seed(master_seed, k);
                match generate_dgp_with(n, t, seed, &spec.dgp) {
                    Ok(truth) => spec
                        .estimators
                        .iter()
                        .map(|e| evaluate(&truth, e, k))
                        .collect(),
                    Err(err) => spec
                        .estimators
                        .iter()
                        .map(|e| ReplicationRecord {
                            index: k,
                            seed,
                            t,
                            n,
                            estimator: e.label(),
                            loadings_cc: None,
                            factors_cc: None,
                            iterations: 0,
                            final_objective: None,
                            error: Some(err.to_string()),
                        })
                        .collect(),
                }
            })
            .collect()
    };
    let per_task = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Parameter(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut rows = Vec::new();
    for (cell, &(t, n)) in spec.cells.iter().enumerate() {
        for (e, est) in spec.estimators.iter().enumerate() {
            let records: Vec<&ReplicationRecord> = tasks
                .iter()
                .zip(&per_task)
                .filter(|((c, _), _)| *c == cell)
                .map(|(_, recs)| &recs[e])
                .collect();
            let ok: Vec<&&ReplicationRecord> = records.iter().filter(|r| !r.failed()).collect();
            let l: Vec<f64> = ok.iter().filter_map(|r| r.loadings_cc).collect();
            let f: Vec<f64> = ok.iter().filter_map(|r| r.factors_cc).collect();
            let (loadings_mean, loadings_se) = mean_se(&l);
            let (factors_mean, factors_se) = mean_se(&f);
            rows.push(ReportRow {
                t,
                n,
                estimator: est.label(),
                method: est.method().into(),
                reps: records.len(),
                failed: records.len() - ok.len(),
                all_failed: ok.is_empty(),
                loadings_mean,
                loadings_se,
                factors_mean,
                factors_se,
            });
        }
    }
    Ok(MonteCarloReport {
        master_seed,
        reps,
        spec: spec.clone(),
        rows,
        replications: per_task.into_iter().flatten().collect(),
    })
}

/// How the threshold constant is chosen in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CChoice {
    Fixed { c: f64 },
    /// `C = C_min + margin` with `C_min` found on that replication.
    AboveMin { margin: f64 },
}

/// Support recovery of the thresholded covariance against the banded truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsistencyRecord {
    pub reps: usize,
    /// Mean fraction of true-zero off-diagonal entries estimated exactly zero.
    pub zero_recovery: f64,
    /// Mean fraction of nonzero band entries estimated nonzero.
    pub band_recovery: f64,
    /// Mean fraction of first-lag entries `(i+1, i)` with `|a_i| >= 0.3` estimated nonzero.
    pub strong_band_recovery: f64,
    /// Mean fraction of band entries with `|Sigma_u0,ij| >= 0.3` estimated nonzero.
    pub strong_entry_recovery: f64,
    /// Positive-definiteness threshold constant found in each replication.
    pub c_min: Vec<f64>,
    /// Constant used in each replication.
    pub c_used: Vec<f64>,
}

pub const STRONG_COEFFICIENT: f64 = 0.3;

pub fn sparsistency_report(
    n: usize,
    t: usize,
    reps: usize,
    kernel: Kernel,
    adaptive: AdaptiveKind,
    choice: CChoice,
    master_seed: u64,
) -> Result<SparsistencyRecord> {
    if reps == 0 {
        return Err(Error::Parameter("reps must be at least 1".into()));
    }
    kernel.validate()?;
    let per_rep: Vec<Result<[f64; 6]>> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let truth = generate_dgp(n, t, replication_seed(master_seed, k))?;
            let resid = pca_residual_covariance(&truth.panel, DGP_FACTORS)?;
            let search = find_min_positive_c_for(&resid, kernel, adaptive, CGrid::default(), n, t)?;
            let c = match choice {
                CChoice::Fixed { c } => c,
                CChoice::AboveMin { margin } => search.c_min + margin,
            };
            let est = threshold_covariance(&resid, &ThresholdRule::new(kernel, adaptive, c)?, n, t)?;
            let mut counts = [0usize; 8];
            for j in 0..n {
                for i in (j + 1)..n {
                    let estimated = usize::from(est.sigma[(i, j)] != 0.0);
                    let truth_ij = truth.sigma_u0[(i, j)];
                    if truth_ij == 0.0 {
                        counts[0] += 1;
                        counts[1] += 1 - estimated;
                    } else {
                        counts[2] += 1;
                        counts[3] += estimated;
                        if truth_ij.abs() >= STRONG_COEFFICIENT {
                            counts[6] += 1;
                            counts[7] += estimated;
                        }
                    }
                    if i == j + 1 && truth.a[j].abs() >= STRONG_COEFFICIENT {
                        counts[4] += 1;
                        counts[5] += estimated;
                    }
                }
            }
            let frac = |h: usize, d: usize| if d == 0 { 1.0 } else { h as f64 / d as f64 };
            Ok([
                frac(counts[1], counts[0]),
                frac(counts[3], counts[2]),
                frac(counts[5], counts[4]),
                frac(counts[7], counts[6]),
                search.c_min,
                c,
            ])
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let mean = |i: usize| per_rep.iter().map(|r| r[i]).sum::<f64>() / reps as f64;
    Ok(SparsistencyRecord {
        reps,
        zero_recovery: mean(0),
        band_recovery: mean(1),
        strong_band_recovery: mean(2),
        strong_entry_recovery: mean(3),
        c_min: per_rep.iter().map(|r| r[4]).collect(),
        c_used: per_rep.iter().map(|r| r[5]).collect(),
    })
}

/// Empirical distribution of `sqrt(T) (lambda_hat_j - lambda_0j)` for the two-step
/// estimator over replications of a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingErrorReport {
    pub rows: Vec<usize>,
    pub reps: usize,
    pub failed: usize,
    /// Per row: mean vector.
    pub means: Vec<Vec<f64>>,
    /// Per row: `r x r` sample covariance, row-major.
    pub covariances: Vec<Vec<f64>>,
}

pub fn loading_error_distribution(
    n: usize,
    t: usize,
    reps: usize,
    rows: &[usize],
    estimator: &EstimatorConfig,
    dgp: &DgpConfig,
    master_seed: u64,
) -> Result<LoadingErrorReport> {
    if reps < 2 {
        return Err(Error::Parameter("need at least two replications".into()));
    }
    if let Some(j) = rows.iter().find(|&&j| j >= n) {
        return Err(Error::Parameter(format!("row {j} out of range")));
    }
    let r = DGP_FACTORS;
    let scale = (t as f64).sqrt();
    let draws: Vec<Option<Vec<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let truth = generate_dgp_with(n, t, replication_seed(master_seed, k), dgp).ok()?;
            let fit = estimator.fit(&truth.panel, r).ok()?;
            let mut lambda = fit.loadings;
            for col in 0..r {
                if lambda.column(col).dot(&truth.loadings0.column(col)) < 0.0 {
                    lambda.column_mut(col).neg_mut();
                }
            }
            Some(
                rows.iter()
                    .flat_map(|&j| {
                        (0..r)
                            .map(|c| scale * (lambda[(j, c)] - truth.loadings0[(j, c)]))
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            )
        })
        .collect();
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::SearchFailure("fewer than two successful replications".into()));
    }
    let k = ok.len() as f64;
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    for (pos, _) in rows.iter().enumerate() {
        let base = pos * r;
        let mean: Vec<f64> = (0..r)
            .map(|c| ok.iter().map(|d| d[base + c]).sum::<f64>() / k)
            .collect();
        let mut cov = vec![0.0; r * r];
        for a in 0..r {
            for b in 0..r {
                cov[a * r + b] = ok
                    .iter()
                    .map(|d| (d[base + a] - mean[a]) * (d[base + b] - mean[b]))
                    .sum::<f64>()
                    / (k - 1.0);
            }
        }
        means.push(mean);
        covariances.push(cov);
    }
    Ok(LoadingErrorReport {
        rows: rows.to_vec(),
        reps,
        failed: reps - ok.len(),
        means,
        covariances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_requires_three_lags() {
        assert!(matches!(generate_dgp(3, 10, 1), Err(Error::Parameter(_))));
        assert!(generate_dgp(4, 10, 1).is_ok());
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let cfg = DgpConfig {
            coef_sd: 0.0,
            ..DgpConfig::default()
        };
        let truth = generate_dgp_with(8, 20, 3, &cfg).unwrap();
        assert_eq!(truth.sigma_u0, Mat::identity(8, 8));
    }

    #[test]
    fn band_structure_and_closed_form() {
        let truth = generate_dgp(12, 20, 4).unwrap();
        for i in 0..12usize {
            for j in 0..12 {
                if i.abs_diff(j) > 3 {
                    assert_eq!(truth.sigma_u0[(i, j)], 0.0);
                }
            }
        }
        // entry (i, j) as the inner product of MA coefficient rows
        let psi = ma_matrix(&truth.a, &truth.b, &truth.c);
        let direct = psi.row(5).dot(&psi.row(3));
        assert_eq!(truth.sigma_u0[(5, 3)], direct);
        // the printed recursion: u_4 = e_4 + a_3 e_3 + b_2 e_2 + c_1 e_1 (1-based)
        assert_eq!(psi[(3, 2)], truth.a[2]);
        assert_eq!(psi[(3, 1)], truth.b[1]);
        assert_eq!(psi[(3, 0)], truth.c[0]);
        assert_eq!(psi[(1, 0)], truth.a[0]);
        assert_eq!(psi[(2, 0)], truth.b[0]);
        assert!(linalg::min_eigenvalue(&truth.sigma_u0) > 0.0);
        assert!(truth.loadings0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_draws() {
        let a = generate_dgp(10, 15, 99).unwrap();
        let b = generate_dgp(10, 15, 99).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.sigma_u0, b.sigma_u0);
        assert_ne!(a.panel, generate_dgp(10, 15, 100).unwrap().panel);
    }

    #[test]
    fn fixed_design_shares_coefficients() {
        let cfg = DgpConfig {
            design_seed: Some(7),
            ..DgpConfig::default()
        };
        let a = generate_dgp_with(10, 15, 1, &cfg).unwrap();
        let b = generate_dgp_with(10, 15, 2, &cfg).unwrap();
        assert_eq!(a.loadings0, b.loadings0);
        assert_eq!(a.sigma_u0, b.sigma_u0);
        assert_ne!(a.factors0, b.factors0);
    }

    #[test]
    fn normalized_and_identified_truth() {
        let cfg = DgpConfig {
            normalize_factors: true,
            identify_loadings: true,
            ..DgpConfig::default()
        };
        let truth = generate_dgp_with(20, 40, 5, &cfg).unwrap();
        let s_f = truth.factors0.tr_mul(&truth.factors0) / 40.0;
        assert!((s_f - Mat::identity(2, 2)).amax() < 1e-12);
        let k = truth.loadings0.tr_mul(&truth.sigma_u0.clone().try_inverse().unwrap())
            * &truth.loadings0;
        assert!(k[(0, 1)].abs() < 1e-10 * k[(0, 0)]);
    }

    #[test]
    fn seeds_are_stable_per_index() {
        let first: Vec<u64> = (0..5).map(|k| replication_seed(42, k)).collect();
        let again: Vec<u64> = (0..10).map(|k| replication_seed(42, k)).collect();
        assert_eq!(first[..], again[..5]);
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, s) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[0.4]), (Some(0.4), Some(0.0)));
        assert_eq!(mean_se(&[]), (None, None));
    }
}
