//! Principal components estimation of factors and loadings.
//!
//! Factors are normalized so that `F'F/T = I_r` and `Lambda'Lambda` is diagonal. The
//! eigenproblem is solved on the smaller of `YY'` (T x T) and `Y'Y` (N x N).

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::panel::{center_panel, PanelData};

#[derive(Debug, Clone)]
pub struct PcaFit {
    /// `N x r` loadings.
    pub loadings: Mat,
    /// `T x r` factors.
    pub factors: Mat,
    /// `T x N` residuals of the centered panel.
    pub residuals: Mat,
    /// `N x N` residual covariance `R`, the orthogonal complement of the top-`r`
    /// spectral components of `S_y`.
    pub residual_cov: Mat,
    /// Leading `r` eigenvalues of `S_y`.
    pub top_eigenvalues: Vec<f64>,
}

pub fn check_rank(r: usize, n: usize, t: usize) -> Result<()> {
    if r == 0 || r >= n.min(t) {
        return Err(Error::Parameter(format!(
            "number of factors must satisfy 1 <= r < min(N, T) = {}, got {r}",
            n.min(t)
        )));
    }
    Ok(())
}

pub fn pca_estimate(panel: &PanelData, r: usize) -> Result<PcaFit> {
    let (t, n) = (panel.t(), panel.n());
    check_rank(r, n, t)?;
    let centered = center_panel(panel);
    let y = centered.values();
    let tf = t as f64;

    let (mut factors, mut loadings, top) = if t <= n {
        let gram = y * y.transpose();
        let (vals, vecs) = linalg::sym_eigen_desc(&gram);
        let top: Vec<f64> = (0..r).map(|j| vals[j] / tf).collect();
        let factors = vecs.columns(0, r) * tf.sqrt();
        let loadings = y.tr_mul(&factors) / tf;
        (factors, loadings, top)
    } else {
        let s = y.tr_mul(y) / tf;
        let (vals, vecs) = linalg::sym_eigen_desc(&linalg::symmetrize(&s));
        let top: Vec<f64> = (0..r).map(|j| vals[j]).collect();
        let mut loadings = vecs.columns(0, r).into_owned();
        for (j, &nu) in top.iter().enumerate() {
            if nu <= 0.0 {
                return Err(Error::Singular(format!(
                    "panel rank is below r: eigenvalue {j} is {nu:.3e}"
                )));
            }
            loadings.column_mut(j).scale_mut(nu.sqrt());
        }
        let mut factors = y * &loadings;
        for (j, &nu) in top.iter().enumerate() {
            factors.column_mut(j).scale_mut(1.0 / nu);
        }
        (factors, loadings, top)
    };
    if let Some(j) = top.iter().position(|&nu| nu <= 0.0) {
        return Err(Error::Singular(format!(
            "panel rank is below r: eigenvalue {j} is not positive"
        )));
    }

    let signs = linalg::fix_column_signs(&mut factors);
    for (j, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            loadings.column_mut(j).neg_mut();
        }
    }

    let residuals = y - &factors * loadings.transpose();
    let residual_cov = linalg::symmetrize(&(residuals.tr_mul(&residuals) / tf));
    Ok(PcaFit {
        loadings,
        factors,
        residuals,
        residual_cov,
        top_eigenvalues: top,
    })
}

/// Residual covariance `R` used as the input to thresholding and as the preliminary
/// estimator for penalty weights.
pub fn pca_residual_covariance(panel: &PanelData, r: usize) -> Result<Mat> {
    Ok(pca_estimate(panel, r)?.residual_cov)
}
