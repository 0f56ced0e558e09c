//! Joint weighted-l1 penalized maximum likelihood of `(Lambda, Sigma_u)`.
//!
//! Each iteration runs an EM update of the loadings, which also yields the expected
//! residual covariance `S_u,k`, followed by a majorize-minimize step on `Sigma_u`: a
//! gradient step on the tangent majorizer of `log|Sigma_u|` and an entrywise soft
//! threshold. The diagonal-ML baseline replaces the covariance step by `diag(S_u,k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{clamp_diagonal, variance_floor, PreparedSigma};
use crate::linalg::{self, Mat, Vector};
use crate::panel::{sample_covariance, PanelData, SampleCovariance};
use crate::pca::pca_estimate;
use crate::twostep::{gls_factors, identify_rotate, relative_change, FactorEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Lasso,
    AdaptiveLasso { gamma: f64, delta_t: f64 },
    Scad { a: f64 },
}

/// Which matrix the penalty weights are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Once, from the PCA residual covariance.
    #[default]
    Fixed,
    /// Every iteration, from the current `S_u,k`.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub mu_t: f64,
    /// Majorize-minimize step size; `None` uses `0.1 * lambda_min` of the starting
    /// covariance.
    pub step_t: Option<f64>,
    #[serde(default)]
    pub weights: WeightMode,
}

impl PenaltySpec {
    pub fn adaptive_lasso(gamma: f64, mu_t: f64) -> Self {
        Self {
            kind: PenaltyKind::AdaptiveLasso {
                gamma,
                delta_t: 0.0,
            },
            mu_t,
            step_t: None,
            weights: WeightMode::Fixed,
        }
    }

    pub fn lasso(mu_t: f64) -> Self {
        Self {
            kind: PenaltyKind::Lasso,
            mu_t,
            step_t: None,
            weights: WeightMode::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // mu_t = 0 switches the penalty off and is accepted.
        if !(self.mu_t >= 0.0) || !self.mu_t.is_finite() {
            return Err(Error::Parameter(format!("mu_T must be nonnegative, got {}", self.mu_t)));
        }
        if let Some(t) = self.step_t {
            if !(t > 0.0) {
                return Err(Error::Parameter(format!("step size must be positive, got {t}")));
            }
        }
        match self.kind {
            PenaltyKind::Lasso => Ok(()),
            PenaltyKind::AdaptiveLasso { gamma, delta_t } => {
                if !(gamma > 0.0) {
                    return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
                }
                if !(delta_t >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "delta_T must be nonnegative, got {delta_t}"
                    )));
                }
                Ok(())
            }
            PenaltyKind::Scad { a } => {
                if !(a > 2.0) {
                    return Err(Error::Parameter(format!("SCAD a must exceed 2, got {a}")));
                }
                if !(self.mu_t > 0.0) {
                    return Err(Error::Parameter("SCAD weights need mu_T > 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// Nonnegative symmetric penalty weights with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Mat);

impl WeightMatrix {
    pub fn new(w: Mat) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension("weight matrix must be square".into()));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("weights must be nonnegative".into()));
        }
        if (0..w.nrows()).any(|i| w[(i, i)] != 0.0) {
            return Err(Error::Parameter("weight diagonal must be zero".into()));
        }
        if linalg::relative_asymmetry(&w) > 1e-12 {
            return Err(Error::Parameter("weights must be symmetric".into()));
        }
        Ok(Self(w))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }
}

pub fn penalty_weights(spec: &PenaltySpec, prelim: &Mat) -> Result<WeightMatrix> {
    spec.validate()?;
    if !prelim.is_square() {
        return Err(Error::Dimension("preliminary estimate must be square".into()));
    }
    let n = prelim.nrows();
    let mut w = Mat::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            // symmetric weights from the averaged pair
            let z = 0.5 * (prelim[(i, j)] + prelim[(j, i)]).abs();
            let v = match spec.kind {
                PenaltyKind::Lasso => 1.0,
                PenaltyKind::AdaptiveLasso { gamma, delta_t } => {
                    let base = z + delta_t;
                    if base == 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "adaptive-lasso weight at ({i}, {j}) divides by zero; set delta_T > 0"
                        )));
                    }
                    let v = base.powf(-gamma);
                    if !v.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "adaptive-lasso weight at ({i}, {j}) overflows; set delta_T > 0"
                        )));
                    }
                    v
                }
                PenaltyKind::Scad { a } => {
                    if z <= spec.mu_t {
                        1.0
                    } else {
                        (a - z / spec.mu_t).max(0.0) / (a - 1.0)
                    }
                }
            };
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(WeightMatrix(w))
}

fn penalty_term(sigma_u: &Mat, mu_t: f64, w: &WeightMatrix) -> f64 {
    if mu_t == 0.0 {
        return 0.0;
    }
    let n = sigma_u.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let s = sigma_u[(i, j)];
            if i != j && s != 0.0 {
                acc += w.0[(i, j)] * s.abs();
            }
        }
    }
    mu_t * acc / n as f64
}

/// `neg_loglik(Lambda, Sigma_u) + (mu_T / N) sum_{i != j} w_ij |Sigma_u,ij|`.
pub fn penalized_objective(
    lambda: &Mat,
    sigma_u: &Mat,
    s_y: &SampleCovariance,
    spec: &PenaltySpec,
    w: &WeightMatrix,
) -> Result<f64> {
    let base = PreparedSigma::new(sigma_u, s_y)?.neg_loglik(lambda)?;
    Ok(base + penalty_term(sigma_u, spec.mu_t, w))
}

/// Entrywise `sign(B_ij) (|B_ij| - Theta_ij)_+` off the diagonal; the diagonal is copied
/// and the result symmetrized.
pub fn matrix_soft_threshold(b: &Mat, theta: &Mat) -> Result<Mat> {
    if b.shape() != theta.shape() || !b.is_square() {
        return Err(Error::Dimension("soft threshold needs square conformable matrices".into()));
    }
    if theta.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Parameter("soft-threshold levels must be nonnegative".into()));
    }
    Ok(soft_threshold_scaled(b, theta, 1.0))
}

fn soft_threshold_scaled(b: &Mat, w: &Mat, scale: f64) -> Mat {
    let n = b.nrows();
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        out[(j, j)] = b[(j, j)];
        for i in (j + 1)..n {
            let z = 0.5 * (b[(i, j)] + b[(j, i)]);
            let v = z.signum() * (z.abs() - scale * w[(i, j)]).max(0.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Gradient-step target `B = Sigma - t (Sigma^-1 - Sigma^-1 S Sigma^-1)`.
fn mm_target(sigma: &Mat, sigma_inv: &Mat, s_uk: &Mat, t: f64) -> Mat {
    let grad = sigma_inv - sigma_inv * s_uk * sigma_inv;
    sigma - grad * t
}

#[derive(Debug, Clone)]
pub struct MmStep {
    pub sigma: Mat,
    pub step_used: f64,
    pub halvings: usize,
}

pub const MAX_HALVINGS: usize = 30;

/// One majorize-minimize covariance step. The step size is halved until the result is
/// positive definite.
pub fn mm_covariance_step(
    sigma_uk: &Mat,
    s_uk: &Mat,
    spec: &PenaltySpec,
    w: &WeightMatrix,
) -> Result<MmStep> {
    spec.validate()?;
    let chol = linalg::cholesky(sigma_uk, "Sigma_u,k")?;
    let inv = chol.inverse();
    let mut t = spec
        .step_t
        .unwrap_or_else(|| 0.1 * linalg::min_eigenvalue(sigma_uk));
    let mut last_min = f64::NAN;
    for halvings in 0..=MAX_HALVINGS {
        let b = mm_target(sigma_uk, &inv, s_uk, t);
        let candidate = soft_threshold_scaled(&b, w.matrix(), spec.mu_t * t);
        if nalgebra::Cholesky::new(candidate.clone()).is_some() {
            return Ok(MmStep {
                sigma: candidate,
                step_used: t,
                halvings,
            });
        }
        last_min = linalg::min_eigenvalue(&candidate);
        t *= 0.5;
    }
    Err(Error::StepFailure {
        halvings: MAX_HALVINGS,
        min_eigenvalue: last_min,
    })
}

/// EM step with the current `Sigma_u,k`: returns `Lambda_{k+1}` and the expected residual
/// covariance `S_u,k = S_y - A Lambda' - Lambda A' + Lambda M Lambda'`.
pub fn em_covariance_target(
    lambda_k: &Mat,
    sigma_uk: &Mat,
    s_y: &SampleCovariance,
) -> Result<(Mat, Mat)> {
    let prepared = PreparedSigma::new(sigma_uk, s_y)?;
    let step = prepared.em_step(lambda_k)?;
    let s_uk = residual_target(s_y.matrix(), &step.a, &step.m, &step.lambda_next);
    Ok((step.lambda_next, s_uk))
}

fn residual_target(s_y: &Mat, a: &Mat, m: &Mat, lambda: &Mat) -> Mat {
    let a_l = a * lambda.transpose();
    let s = s_y - &a_l - a_l.transpose() + lambda * m * lambda.transpose();
    linalg::symmetrize(&s)
}

/// Smallest eigenvalue accepted for a joint iterate, as a fraction of the smallest
/// variance floor. Nearly singular candidates pass a Cholesky test but the likelihood
/// evaluated at them is dominated by cancellation error.
pub const EIGEN_FLOOR: f64 = 1e-3;

fn well_conditioned(prepared: &PreparedSigma, sigma: &Mat, eigen_floor: f64) -> bool {
    // 1 / ||Sigma^-1||_inf bounds lambda_min from below; fall back to the exact value
    let inv = prepared.inverse_matrix();
    let norm = inv.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
    1.0 / norm >= eigen_floor || linalg::min_eigenvalue(sigma) >= eigen_floor
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Per-iteration record of the joint solver, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct JointIterate {
    pub lambda: Mat,
    pub sigma_u: Mat,
    pub objective: f64,
    pub step_used: f64,
    /// True when no step size produced descent and `Sigma_u` was kept.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct JointFit {
    pub estimate: FactorEstimate,
    pub weights: WeightMatrix,
    pub history: Vec<JointIterate>,
}

pub fn joint_estimate(
    panel: &PanelData,
    r: usize,
    spec: &PenaltySpec,
    options: &JointOptions,
) -> Result<FactorEstimate> {
    Ok(joint_estimate_detailed(panel, r, spec, options, false)?.estimate)
}

/// Joint estimator; `keep_history` retains every iterate.
pub fn joint_estimate_detailed(
    panel: &PanelData,
    r: usize,
    spec: &PenaltySpec,
    options: &JointOptions,
    keep_history: bool,
) -> Result<JointFit> {
    spec.validate()?;
    let pca = pca_estimate(panel, r)?;
    let s_y = sample_covariance(panel);
    let mut lambda = pca.loadings;
    let mut sigma = Mat::from_diagonal(&pca.residual_cov.diagonal());
    let step0 = spec
        .step_t
        .unwrap_or_else(|| 0.1 * pca.residual_cov.diagonal().min());
    if !(step0 > 0.0) {
        return Err(Error::InvalidInput(
            "PCA residual variances must be positive".into(),
        ));
    }
    let mut weights = penalty_weights(spec, &pca.residual_cov)?;
    let floor = variance_floor(s_y.matrix());
    clamp_diagonal(&mut sigma, &floor);
    let eigen_floor = EIGEN_FLOOR * floor.min();

    let mut prepared = PreparedSigma::new(&sigma, &s_y)?;
    let mut objective = prepared.neg_loglik(&lambda)? + penalty_term(&sigma, spec.mu_t, &weights);
    let mut trace = vec![objective];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=options.max_iter {
        let step = prepared.em_step(&lambda).map_err(|e| e.at("joint iteration", k))?;
        let s_uk = residual_target(s_y.matrix(), &step.a, &step.m, &step.lambda_next);
        let lambda_next = step.lambda_next;

        let mut reference = objective;
        if spec.weights == WeightMode::Iterative {
            weights = penalty_weights(spec, &s_uk).map_err(|e| e.at("joint iteration", k))?;
            reference = prepared.neg_loglik(&lambda)? + penalty_term(&sigma, spec.mu_t, &weights);
        }

        let inv = prepared.inverse_matrix();
        let mut t = step0;
        let mut accepted: Option<(Mat, PreparedSigma, f64)> = None;
        for _ in 0..=MAX_HALVINGS {
            let b = mm_target(&sigma, &inv, &s_uk, t);
            let mut candidate = soft_threshold_scaled(&b, weights.matrix(), spec.mu_t * t);
            clamp_diagonal(&mut candidate, &floor);
            match PreparedSigma::new(&candidate, &s_y) {
                Ok(cand) if !well_conditioned(&cand, &candidate, eigen_floor) => {}
                Ok(cand) => {
                    let value = cand.neg_loglik(&lambda_next)?
                        + penalty_term(&candidate, spec.mu_t, &weights);
                    if value <= reference {
                        accepted = Some((candidate, cand, value));
                        break;
                    }
                }
                Err(Error::NotPositiveDefinite { .. }) => {}
                Err(e) => return Err(e.at("joint iteration", k)),
            }
            t *= 0.5;
        }

        let stalled = accepted.is_none();
        let (next_sigma, next_prepared, next_obj) = match accepted {
            Some(found) => found,
            None => {
                // No positive definite descent step along the MM direction: keep
                // Sigma_u, the EM update alone does not increase the objective.
                let cand = PreparedSigma::new(&sigma, &s_y)?;
                let value = cand.neg_loglik(&lambda_next)? + penalty_term(&sigma, spec.mu_t, &weights);
                (sigma.clone(), cand, value)
            }
        };

        lambda = lambda_next;
        sigma = next_sigma;
        prepared = next_prepared;
        trace.push(next_obj);
        iterations = k;
        if keep_history {
            history.push(JointIterate {
                lambda: lambda.clone(),
                sigma_u: sigma.clone(),
                objective: next_obj,
                step_used: t,
                stalled,
            });
        }
        let change = relative_change(reference, next_obj);
        objective = next_obj;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let rotation = identify_rotate(&lambda, &sigma)?;
    let factors = gls_factors(&rotation.loadings, &sigma, panel)?;
    Ok(JointFit {
        estimate: FactorEstimate {
            method: "jointpml".into(),
            loadings: rotation.loadings,
            factors,
            sigma_u: sigma,
            r,
            objective_trace: trace,
            segment_starts: vec![0],
            iterations,
            outer_iterations: 1,
            converged,
            tied_identification: rotation.ties,
        },
        weights,
        history,
    })
}

/// Maximum likelihood with `Sigma_u` restricted to be diagonal.
pub fn dml_estimate(panel: &PanelData, r: usize, options: &JointOptions) -> Result<FactorEstimate> {
    let pca = pca_estimate(panel, r)?;
    let s_y = sample_covariance(panel);
    let mut lambda = pca.loadings;
    let floor = variance_floor(s_y.matrix());
    let mut d: Vector = pca.residual_cov.diagonal().zip_map(&floor, f64::max);
    let mut prepared = PreparedSigma::diagonal(&d, s_y.matrix())?;
    let mut objective = prepared.neg_loglik(&lambda)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=options.max_iter {
        let step = prepared.em_step(&lambda).map_err(|e| e.at("DML iteration", k))?;
        let next = &step.lambda_next;
        // diag(S_y - A L' - L A' + L M L')
        let lm = next * &step.m;
        d = Vector::from_fn(d.len(), |i, _| {
            let al = step.a.row(i).dot(&next.row(i));
            (s_y.matrix()[(i, i)] - 2.0 * al + lm.row(i).dot(&next.row(i))).max(floor[i])
        });
        prepared = PreparedSigma::diagonal(&d, s_y.matrix()).map_err(|e| e.at("DML iteration", k))?;
        lambda = step.lambda_next;
        let next_obj = prepared.neg_loglik(&lambda)?;
        trace.push(next_obj);
        iterations = k;
        let change = relative_change(objective, next_obj);
        objective = next_obj;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let sigma = Mat::from_diagonal(&d);
    let rotation = identify_rotate(&lambda, &sigma)?;
    let factors = gls_factors(&rotation.loadings, &sigma, panel)?;
    Ok(FactorEstimate {
        method: "dml".into(),
        loadings: rotation.loadings,
        factors,
        sigma_u: sigma,
        r,
        objective_trace: trace,
        segment_starts: vec![0],
        iterations,
        outer_iterations: 1,
        converged,
        tied_identification: rotation.ties,
    })
}
