//! Entry-adaptive thresholding of the principal orthogonal complement (POET).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::panel::{omega_t, PanelData};
use crate::pca::pca_residual_covariance;

/// Entrywise shrinkage function applied to off-diagonal covariance entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Hard,
    Soft,
    Scad { a: f64 },
}

impl Kernel {
    pub const SCAD_DEFAULT_A: f64 = 3.7;

    pub fn scad() -> Self {
        Kernel::Scad {
            a: Self::SCAD_DEFAULT_A,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Scad { a } if !(a > 2.0) => Err(Error::Parameter(format!(
                "SCAD parameter a must exceed 2, got {a}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Hard => "hard",
            Kernel::Soft => "soft",
            Kernel::Scad { .. } => "scad",
        }
    }
}

/// How the entry-dependent factor `alpha_ij` of `tau_ij = C alpha_ij omega_T` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveKind {
    /// `alpha_ij = 1`.
    Universal,
    /// `alpha_ij = sqrt(R_ii R_jj)`, i.e. thresholding the correlation matrix of `R`.
    Correlation,
}

impl AdaptiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            AdaptiveKind::Universal => "universal",
            AdaptiveKind::Correlation => "correlation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub kernel: Kernel,
    pub adaptive: AdaptiveKind,
    pub c: f64,
}

impl ThresholdRule {
    pub fn new(kernel: Kernel, adaptive: AdaptiveKind, c: f64) -> Result<Self> {
        let rule = Self { kernel, adaptive, c };
        rule.validate()?;
        Ok(rule)
    }

    /// SCAD kernel on correlation-scaled thresholds with `C = 1`.
    pub fn scad_correlation() -> Self {
        Self {
            kernel: Kernel::scad(),
            adaptive: AdaptiveKind::Correlation,
            c: 1.0,
        }
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        // C = 0 is allowed: it disables thresholding.
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Parameter(format!(
                "threshold constant C must be finite and nonnegative, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Applies the thresholding kernel to a single entry.
pub fn threshold_value(z: f64, tau: f64, kernel: Kernel) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("threshold must be nonnegative, got {tau}")));
    }
    kernel.validate()?;
    Ok(apply_kernel(z, tau, kernel))
}

fn apply_kernel(z: f64, tau: f64, kernel: Kernel) -> f64 {
    let abs = z.abs();
    match kernel {
        Kernel::Hard => {
            if abs > tau {
                z
            } else {
                0.0
            }
        }
        Kernel::Soft => z.signum() * (abs - tau).max(0.0),
        Kernel::Scad { a } => {
            if abs <= 2.0 * tau {
                z.signum() * (abs - tau).max(0.0)
            } else if abs <= a * tau {
                ((a - 1.0) * z - z.signum() * a * tau) / (a - 2.0)
            } else {
                z
            }
        }
    }
}

fn check_diagonal(r: &Mat) -> Result<()> {
    if !r.is_square() {
        return Err(Error::Dimension("residual covariance must be square".into()));
    }
    if let Some(i) = (0..r.nrows()).find(|&i| !(r[(i, i)] > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "residual covariance has nonpositive diagonal entry {} at index {i}",
            r[(i, i)]
        )));
    }
    Ok(())
}

fn alpha(r: &Mat, adaptive: AdaptiveKind, i: usize, j: usize) -> f64 {
    match adaptive {
        AdaptiveKind::Universal => 1.0,
        AdaptiveKind::Correlation => (r[(i, i)] * r[(j, j)]).sqrt(),
    }
}

/// Threshold matrix `tau_ij`; the diagonal is zero since it is never thresholded.
pub fn adaptive_tau(r: &Mat, rule: &ThresholdRule, n: usize, t: usize) -> Result<Mat> {
    rule.validate()?;
    check_diagonal(r)?;
    let scale = rule.c * omega_t(n, t);
    Ok(Mat::from_fn(r.nrows(), r.ncols(), |i, j| {
        if i == j {
            0.0
        } else {
            scale * alpha(r, rule.adaptive, i, j)
        }
    }))
}

/// Smallest `C` at which every off-diagonal entry of `R` is thresholded to zero, rounded
/// up by a few ulps so that `tau_ij >= |R_ij|` survives the product `C alpha_ij omega_T`.
pub fn c_max(r: &Mat, adaptive: AdaptiveKind, n: usize, t: usize) -> Result<f64> {
    check_diagonal(r)?;
    let omega = omega_t(n, t);
    let mut best = 0.0_f64;
    for j in 0..r.ncols() {
        for i in (j + 1)..r.nrows() {
            best = best.max(r[(i, j)].abs() / (alpha(r, adaptive, i, j) * omega));
        }
    }
    Ok(best * (1.0 + 8.0 * f64::EPSILON))
}

#[derive(Debug, Clone)]
pub struct SparseCovEstimate {
    pub sigma: Mat,
    pub rule: ThresholdRule,
    pub min_eigenvalue: f64,
    /// Number of nonzero off-diagonal entries, counting both triangles.
    pub support_size: usize,
}

/// Thresholds the off-diagonal entries of a residual covariance. The upper triangle is
/// computed and mirrored, and the diagonal is copied verbatim.
pub fn threshold_covariance(
    r: &Mat,
    rule: &ThresholdRule,
    n: usize,
    t: usize,
) -> Result<SparseCovEstimate> {
    let sigma = threshold_matrix(r, rule, n, t)?;
    let support_size = off_diagonal_support(&sigma);
    let min_eigenvalue = linalg::min_eigenvalue(&sigma);
    Ok(SparseCovEstimate {
        sigma,
        rule: *rule,
        min_eigenvalue,
        support_size,
    })
}

fn threshold_matrix(r: &Mat, rule: &ThresholdRule, n: usize, t: usize) -> Result<Mat> {
    rule.validate()?;
    check_diagonal(r)?;
    let scale = rule.c * omega_t(n, t);
    let mut sigma = r.clone();
    for j in 0..r.ncols() {
        for i in (j + 1)..r.nrows() {
            let tau = scale * alpha(r, rule.adaptive, i, j);
            let v = apply_kernel(r[(i, j)], tau, rule.kernel);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

pub fn off_diagonal_support(m: &Mat) -> usize {
    let mut count = 0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// POET estimate of the idiosyncratic covariance from a panel.
pub fn poet_estimate(panel: &PanelData, r: usize, rule: &ThresholdRule) -> Result<SparseCovEstimate> {
    rule.validate()?;
    let resid = pca_residual_covariance(panel, r)?;
    threshold_covariance(&resid, rule, panel.n(), panel.t())
}

/// `(C, lambda_min)` pairs for a residual covariance, in the order of `cs`.
pub fn min_eigen_curve_for(
    resid: &Mat,
    kernel: Kernel,
    adaptive: AdaptiveKind,
    cs: &[f64],
    n: usize,
    t: usize,
) -> Result<Vec<(f64, f64)>> {
    if cs.is_empty() {
        return Err(Error::Parameter("C grid must be nonempty".into()));
    }
    if let Some(c) = cs.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::Parameter(format!("C values must be nonnegative, got {c}")));
    }
    cs.par_iter()
        .map(|&c| {
            let rule = ThresholdRule { kernel, adaptive, c };
            let sigma = threshold_matrix(resid, &rule, n, t)?;
            Ok((c, linalg::min_eigenvalue(&sigma)))
        })
        .collect()
}

pub fn min_eigen_curve(
    panel: &PanelData,
    r: usize,
    kernel: Kernel,
    adaptive: AdaptiveKind,
    cs: &[f64],
) -> Result<Vec<(f64, f64)>> {
    kernel.validate()?;
    let resid = pca_residual_covariance(panel, r)?;
    min_eigen_curve_for(&resid, kernel, adaptive, cs, panel.n(), panel.t())
}

/// Grid for the positive-definiteness search. `upper = None` means `C_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CGrid {
    pub lower: f64,
    pub upper: Option<f64>,
    pub step: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub resolution: f64,
}

impl Default for CGrid {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: None,
            step: 0.05,
            resolution: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CminSearch {
    pub c_min: f64,
    pub c_max: f64,
    /// Scanned `(C, lambda_min)` pairs.
    pub curve: Vec<(f64, f64)>,
    /// Grid points below the last non-positive-definite point that were already
    /// positive definite, i.e. where the curve is not monotone in sign.
    pub violations: Vec<f64>,
}

pub fn find_min_positive_c_for(
    resid: &Mat,
    kernel: Kernel,
    adaptive: AdaptiveKind,
    grid: CGrid,
    n: usize,
    t: usize,
) -> Result<CminSearch> {
    kernel.validate()?;
    let cmax = c_max(resid, adaptive, n, t)?;
    let upper = grid.upper.unwrap_or(cmax);
    if !(grid.step > 0.0) || !(grid.resolution > 0.0) {
        return Err(Error::Parameter("grid step and resolution must be positive".into()));
    }
    if !(grid.lower >= 0.0) || upper < grid.lower {
        return Err(Error::Parameter(format!(
            "invalid C grid [{}, {upper}]",
            grid.lower
        )));
    }
    let mut cs = Vec::new();
    let mut k = 0usize;
    loop {
        let c = grid.lower + k as f64 * grid.step;
        if c >= upper {
            break;
        }
        cs.push(c);
        k += 1;
    }
    cs.push(upper);
    let curve = min_eigen_curve_for(resid, kernel, adaptive, &cs, n, t)?;

    let last_bad = curve.iter().rposition(|&(_, lam)| lam <= 0.0);
    let Some(bad) = last_bad else {
        return Ok(CminSearch {
            c_min: grid.lower,
            c_max: cmax,
            curve,
            violations: Vec::new(),
        });
    };
    if bad + 1 == curve.len() {
        return Err(Error::SearchFailure(format!(
            "no positive definite estimate on the C grid up to {upper}"
        )));
    }
    let violations = curve[..bad]
        .iter()
        .filter(|&&(_, lam)| lam > 0.0)
        .map(|&(c, _)| c)
        .collect();

    let (mut lo, mut hi) = (curve[bad].0, curve[bad + 1].0);
    while hi - lo > grid.resolution {
        let mid = 0.5 * (lo + hi);
        let rule = ThresholdRule { kernel, adaptive, c: mid };
        let lam = linalg::min_eigenvalue(&threshold_matrix(resid, &rule, n, t)?);
        if lam > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CminSearch {
        c_min: hi,
        c_max: cmax,
        curve,
        violations,
    })
}

/// Searches for the smallest `C` above which the thresholded covariance stays positive
/// definite.
pub fn find_min_positive_c(
    panel: &PanelData,
    r: usize,
    kernel: Kernel,
    adaptive: AdaptiveKind,
    grid: CGrid,
) -> Result<CminSearch> {
    let resid = pca_residual_covariance(panel, r)?;
    find_min_positive_c_for(&resid, kernel, adaptive, grid, panel.n(), panel.t())
}
