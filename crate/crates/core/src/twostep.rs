//! Two-step quasi-maximum-likelihood estimator.
//!
//! Step one thresholds the residual covariance; step two minimizes the quasi-likelihood
//! over the loadings with that covariance frozen, using EM updates. Loadings are rotated
//! to the identification `Lambda' Sigma_u^-1 Lambda` diagonal (decreasing) and factors are
//! recovered by GLS. The threshold/estimate cycle can be repeated on the updated residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{clamp_diagonal, variance_floor, PreparedSigma};
use crate::linalg::{self, Mat};
use crate::panel::{center_panel, sample_covariance, PanelData};
use crate::pca::pca_estimate;
use crate::poet::{threshold_covariance, ThresholdRule};

/// Estimated loadings, factors and idiosyncratic covariance under the identification
/// `S_f = I`, `Lambda' Sigma_u^-1 Lambda` diagonal and decreasing.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    pub method: String,
    pub loadings: Mat,
    pub factors: Mat,
    pub sigma_u: Mat,
    pub r: usize,
    /// Objective value after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
    /// Indices into `objective_trace` where a new monotone segment starts. The two-step
    /// estimator starts one per outer pass since `Sigma_u` changes between passes.
    pub segment_starts: Vec<usize>,
    /// Total inner iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when `Lambda' Sigma_u^-1 Lambda` has (numerically) tied eigenvalues, so the
    /// rotation is not unique.
    pub tied_identification: bool,
}

impl FactorEstimate {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct Rotation {
    pub loadings: Mat,
    /// Eigenvalues of `Lambda' Sigma_u^-1 Lambda`, descending.
    pub eigenvalues: Vec<f64>,
    pub ties: bool,
}

/// Rotates `Lambda` by the eigenvectors of `Lambda' Sigma_u^-1 Lambda` (decreasing order).
/// Column signs follow the largest-magnitude-entry-positive convention.
pub fn identify_rotate(lambda: &Mat, sigma_u: &Mat) -> Result<Rotation> {
    let chol = linalg::cholesky(sigma_u, "Sigma_u")?;
    identify_with(lambda, &chol.solve(lambda))
}

fn identify_with(lambda: &Mat, sigma_inv_lambda: &Mat) -> Result<Rotation> {
    let k = linalg::symmetrize(&lambda.tr_mul(sigma_inv_lambda));
    let (vals, vecs) = linalg::sym_eigen_desc(&k);
    let top = vals.iter().fold(0.0_f64, |a, v| a.max(*v));
    let bottom = vals.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(top > 0.0) || bottom <= 1e-12 * top {
        return Err(Error::Singular("loadings are not of full column rank".into()));
    }
    let ties = vals
        .as_slice()
        .windows(2)
        .any(|w| (w[0] - w[1]).abs() <= 1e-10 * top);
    let mut loadings = lambda * vecs;
    linalg::fix_column_signs(&mut loadings);
    Ok(Rotation {
        loadings,
        eigenvalues: vals.iter().copied().collect(),
        ties,
    })
}

/// GLS factor scores `(Lambda' Sigma_u^-1 Lambda)^-1 Lambda' Sigma_u^-1 (y_t - ybar)`, one row
/// per time point.
pub fn gls_factors(lambda: &Mat, sigma_u: &Mat, panel: &PanelData) -> Result<Mat> {
    if lambda.nrows() != panel.n() || sigma_u.shape() != (panel.n(), panel.n()) {
        return Err(Error::Dimension("loadings, Sigma_u and panel are not conformable".into()));
    }
    let chol = linalg::cholesky(sigma_u, "Sigma_u")?;
    let p = chol.solve(lambda);
    let k = linalg::symmetrize(&lambda.tr_mul(&p));
    let k_inv = linalg::spd_inverse(&k, "Lambda' Sigma_u^-1 Lambda")?;
    let centered = center_panel(panel);
    Ok(centered.values() * p * k_inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepOptions {
    pub max_outer: usize,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub inner_tol: f64,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        Self {
            max_outer: 10,
            outer_tol: 1e-6,
            max_inner: 500,
            inner_tol: 1e-8,
        }
    }
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (prev - next).abs() / prev.abs().max(1e-12)
}

pub fn twostep_estimate(
    panel: &PanelData,
    r: usize,
    rule: &ThresholdRule,
    options: &TwoStepOptions,
) -> Result<FactorEstimate> {
    rule.validate()?;
    if options.max_outer == 0 {
        return Err(Error::Parameter("max_outer must be at least 1".into()));
    }
    let (n, t) = (panel.n(), panel.t());
    let pca = pca_estimate(panel, r)?;
    let s_y = sample_covariance(panel);
    let centered = center_panel(panel);
    let floor = variance_floor(s_y.matrix());

    let mut resid_cov = pca.residual_cov;
    let mut lambda = pca.loadings;
    let mut trace = Vec::new();
    let mut segment_starts = Vec::new();
    let mut iterations = 0;
    let mut outer_done = 0;
    let mut converged = false;
    let mut previous_outer: Option<f64> = None;
    let mut result: Option<(Mat, Mat, Mat, bool)> = None;

    for outer in 1..=options.max_outer {
        let est = threshold_covariance(&resid_cov, rule, n, t).map_err(|e| e.at("outer step", outer))?;
        let mut sigma_u = est.sigma;
        clamp_diagonal(&mut sigma_u, &floor);
        let prepared = PreparedSigma::new(&sigma_u, &s_y).map_err(|e| e.at("outer step", outer))?;

        segment_starts.push(trace.len());
        let mut obj = prepared.neg_loglik(&lambda).map_err(|e| e.at("outer step", outer))?;
        trace.push(obj);
        for inner in 1..=options.max_inner {
            let step = prepared.em_step(&lambda).map_err(|e| e.at("EM iteration", inner))?;
            let next_obj = prepared.neg_loglik(&step.lambda_next)?;
            lambda = step.lambda_next;
            trace.push(next_obj);
            iterations += 1;
            let change = relative_change(obj, next_obj);
            obj = next_obj;
            if change < options.inner_tol {
                break;
            }
        }

        let rotation = identify_rotate(&lambda, &sigma_u).map_err(|e| e.at("outer step", outer))?;
        lambda = rotation.loadings;
        let factors = gls_factors(&lambda, &sigma_u, panel).map_err(|e| e.at("outer step", outer))?;
        let resid = centered.values() - &factors * lambda.transpose();
        resid_cov = linalg::symmetrize(&(resid.tr_mul(&resid) / t as f64));
        outer_done = outer;
        result = Some((lambda.clone(), factors, sigma_u, rotation.ties));

        if let Some(prev) = previous_outer {
            if relative_change(prev, obj) < options.outer_tol {
                converged = true;
                break;
            }
        }
        previous_outer = Some(obj);
    }
    if options.max_outer == 1 {
        converged = true;
    }

    let (loadings, factors, sigma_u, ties) = result.expect("at least one outer pass");
    Ok(FactorEstimate {
        method: "twostep".into(),
        loadings,
        factors,
        sigma_u,
        r,
        objective_trace: trace,
        segment_starts,
        iterations,
        outer_iterations: outer_done,
        converged,
        tied_identification: ties,
    })
}
