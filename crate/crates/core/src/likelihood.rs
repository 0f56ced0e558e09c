//! Gaussian quasi-likelihood of the factor model and its EM update for the loadings.
//!
//! All evaluations go through the Woodbury identity and the matrix determinant lemma, so
//! with `Sigma_u` factored once only `r x r` systems are solved per evaluation.

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::panel::SampleCovariance;

enum Inverse {
    Dense { chol: Cholesky<f64, Dyn>, inv: Mat },
    Diagonal(Vector),
}

/// Lower bound on idiosyncratic variances as a fraction of `S_y,ii`. Keeps the ML
/// iterations away from Heywood cases where one variance collapses to zero.
pub const UNIQUENESS_FLOOR: f64 = 0.005;

pub fn variance_floor(s_y: &Mat) -> Vector {
    s_y.diagonal() * UNIQUENESS_FLOOR
}

/// Raises diagonal entries to `floor`; returns how many were raised.
pub fn clamp_diagonal(m: &mut Mat, floor: &Vector) -> usize {
    let mut raised = 0;
    for i in 0..m.nrows() {
        if m[(i, i)] < floor[i] {
            m[(i, i)] = floor[i];
            raised += 1;
        }
    }
    raised
}

/// `Sigma_u` prepared for repeated likelihood evaluations against a fixed `S_y`.
pub struct PreparedSigma<'a> {
    s_y: &'a Mat,
    inverse: Inverse,
    logdet: f64,
    trace_s_inv: f64,
}

/// Pieces of `(Lambda Lambda' + Sigma_u)^-1` for one loading matrix.
struct Woodbury {
    /// `Sigma_u^-1 Lambda`
    p: Mat,
    /// `(I + Lambda' Sigma_u^-1 Lambda)^-1`
    g_inv: Mat,
    /// `log |I + Lambda' Sigma_u^-1 Lambda|`
    g_logdet: f64,
}

/// One EM update of the loadings: `Lambda_next = A M^-1`.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub lambda_next: Mat,
    pub a: Mat,
    pub m: Mat,
}

impl<'a> PreparedSigma<'a> {
    pub fn new(sigma_u: &Mat, s_y: &'a SampleCovariance) -> Result<Self> {
        Self::dense(sigma_u, s_y.matrix())
    }

    pub(crate) fn dense(sigma_u: &Mat, s_y: &'a Mat) -> Result<Self> {
        if sigma_u.shape() != s_y.shape() {
            return Err(Error::Dimension(format!(
                "Sigma_u is {:?} but S_y is {:?}",
                sigma_u.shape(),
                s_y.shape()
            )));
        }
        let chol = linalg::cholesky(sigma_u, "Sigma_u")?;
        let logdet = linalg::chol_logdet(&chol);
        let inv = chol.inverse();
        let trace_s_inv = linalg::trace_product(s_y, &inv);
        Ok(Self {
            s_y,
            inverse: Inverse::Dense { chol, inv },
            logdet,
            trace_s_inv,
        })
    }

    pub(crate) fn diagonal(d: &Vector, s_y: &'a Mat) -> Result<Self> {
        if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NotPositiveDefinite {
                context: format!("diagonal Sigma_u entry {i}"),
                min_eigenvalue: d[i],
            });
        }
        let logdet = d.iter().map(|v| v.ln()).sum();
        let trace_s_inv = (0..d.len()).map(|i| s_y[(i, i)] / d[i]).sum();
        Ok(Self {
            s_y,
            inverse: Inverse::Diagonal(d.clone()),
            logdet,
            trace_s_inv,
        })
    }

    pub fn n(&self) -> usize {
        self.s_y.nrows()
    }

    /// Explicit `Sigma_u^-1`.
    pub(crate) fn inverse_matrix(&self) -> Mat {
        match &self.inverse {
            Inverse::Dense { inv, .. } => inv.clone(),
            Inverse::Diagonal(d) => Mat::from_diagonal(&d.map(|v| 1.0 / v)),
        }
    }

    fn solve(&self, x: &Mat) -> Mat {
        match &self.inverse {
            Inverse::Dense { chol, .. } => chol.solve(x),
            Inverse::Diagonal(d) => {
                let mut out = x.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row.scale_mut(1.0 / d[i]);
                }
                out
            }
        }
    }

    fn woodbury(&self, lambda: &Mat) -> Result<Woodbury> {
        if lambda.nrows() != self.n() {
            return Err(Error::Dimension(format!(
                "loadings have {} rows, expected {}",
                lambda.nrows(),
                self.n()
            )));
        }
        let r = lambda.ncols();
        let p = self.solve(lambda);
        let g = linalg::symmetrize(&(Mat::identity(r, r) + lambda.tr_mul(&p)));
        let chol = Cholesky::new(g)
            .ok_or_else(|| Error::Singular("I + Lambda' Sigma_u^-1 Lambda".into()))?;
        Ok(Woodbury {
            p,
            g_inv: chol.inverse(),
            g_logdet: linalg::chol_logdet(&chol),
        })
    }

    /// `(1/N) log|Lambda Lambda' + Sigma_u| + (1/N) tr(S_y (Lambda Lambda' + Sigma_u)^-1)`.
    pub fn neg_loglik(&self, lambda: &Mat) -> Result<f64> {
        let w = self.woodbury(lambda)?;
        let sp = self.s_y * &w.p;
        let correction = linalg::trace_product(&w.g_inv, &w.p.tr_mul(&sp));
        let n = self.n() as f64;
        Ok((self.logdet + w.g_logdet + self.trace_s_inv - correction) / n)
    }

    /// Gradient of [`Self::neg_loglik`] with respect to `Lambda`:
    /// `(2/N) (Sigma_y^-1 - Sigma_y^-1 S_y Sigma_y^-1) Lambda`.
    pub fn gradient(&self, lambda: &Mat) -> Result<Mat> {
        let w = self.woodbury(lambda)?;
        let q = &w.p * &w.g_inv;
        let a = self.s_y * &q;
        // Sigma_y^-1 A = Sigma_u^-1 A - P G^-1 P' A
        let sy_inv_a = self.solve(&a) - &w.p * (&w.g_inv * w.p.tr_mul(&a));
        Ok((q - sy_inv_a) * (2.0 / self.n() as f64))
    }

    pub fn em_step(&self, lambda: &Mat) -> Result<EmStep> {
        let w = self.woodbury(lambda)?;
        // Sigma_y^-1 Lambda = P G^-1 and Lambda' Sigma_y^-1 Lambda = I - G^-1
        let q = &w.p * &w.g_inv;
        let a = self.s_y * &q;
        let m = linalg::symmetrize(&(q.tr_mul(&a) + &w.g_inv));
        let lu = m.clone().lu();
        let lambda_next = lu
            .solve(&a.transpose())
            .ok_or_else(|| Error::Singular("EM matrix M".into()))?
            .transpose();
        if lambda_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("EM matrix M".into()));
        }
        Ok(EmStep { lambda_next, a, m })
    }
}

/// Negative Gaussian quasi-log-likelihood of `(Lambda, Sigma_u)` given `S_y`.
pub fn neg_loglik(lambda: &Mat, sigma_u: &Mat, s_y: &SampleCovariance) -> Result<f64> {
    PreparedSigma::new(sigma_u, s_y)?.neg_loglik(lambda)
}

pub fn neg_loglik_gradient(lambda: &Mat, sigma_u: &Mat, s_y: &SampleCovariance) -> Result<Mat> {
    PreparedSigma::new(sigma_u, s_y)?.gradient(lambda)
}

/// EM update of the loadings with `Sigma_u` held fixed.
pub fn em_update_loadings(lambda: &Mat, sigma_u: &Mat, s_y: &SampleCovariance) -> Result<Mat> {
    Ok(PreparedSigma::new(sigma_u, s_y)?.em_step(lambda)?.lambda_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let a = random(n, n, rng);
        a.tr_mul(&a) / n as f64 + Mat::identity(n, n) * 0.5
    }

    fn dense_neg_loglik(lambda: &Mat, sigma_u: &Mat, s: &Mat) -> f64 {
        let sy = lambda * lambda.transpose() + sigma_u;
        let n = s.nrows() as f64;
        let inv = sy.clone().try_inverse().unwrap();
        (sy.determinant().abs().ln() + (s * inv).trace()) / n
    }

    #[test]
    fn zero_loadings_identity() {
        let s = SampleCovariance::from_matrix(Mat::identity(4, 4)).unwrap();
        let v = neg_loglik(&Mat::zeros(4, 1), &Mat::identity(4, 4), &s).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn woodbury_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, r) in [(3, 1), (7, 2), (10, 3)] {
            let lambda = random(n, r, &mut rng);
            let sigma = random_spd(n, &mut rng);
            let s = SampleCovariance::from_matrix(linalg::symmetrize(&random_spd(n, &mut rng)))
                .unwrap();
            let fast = neg_loglik(&lambda, &sigma, &s).unwrap();
            let slow = dense_neg_loglik(&lambda, &sigma, s.matrix());
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn diagonal_path_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = random(6, 2, &mut rng);
        let d = Vector::from_fn(6, |_, _| rng.random_range(0.5..2.0));
        let s = random_spd(6, &mut rng);
        let s = linalg::symmetrize(&s);
        let diag = PreparedSigma::diagonal(&d, &s).unwrap();
        let dense = PreparedSigma::dense(&Mat::from_diagonal(&d), &s).unwrap();
        assert!((diag.neg_loglik(&lambda).unwrap() - dense.neg_loglik(&lambda).unwrap()).abs() < 1e-12);
        let a = diag.em_step(&lambda).unwrap().lambda_next;
        let b = dense.em_step(&lambda).unwrap().lambda_next;
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = random(8, 2, &mut rng);
        let sigma = random_spd(8, &mut rng);
        let s = SampleCovariance::from_matrix(linalg::symmetrize(&random_spd(8, &mut rng))).unwrap();
        let th = 0.7_f64;
        let o = Mat::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let a = neg_loglik(&lambda, &sigma, &s).unwrap();
        let b = neg_loglik(&(&lambda * o), &sigma, &s).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let s = SampleCovariance::from_matrix(Mat::identity(2, 2)).unwrap();
        let sigma = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            neg_loglik(&Mat::zeros(2, 1), &sigma, &s),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn em_fixed_point_when_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lambda = random(9, 2, &mut rng);
        let sigma = random_spd(9, &mut rng);
        let s = SampleCovariance::from_matrix(linalg::symmetrize(
            &(&lambda * lambda.transpose() + &sigma),
        ))
        .unwrap();
        let next = em_update_loadings(&lambda, &sigma, &s).unwrap();
        assert!((next - lambda).amax() < 1e-10);
    }

    #[test]
    fn em_step_decreases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lambda0 = random(10, 2, &mut rng) * 2.0;
        let sigma = random_spd(10, &mut rng);
        let s = SampleCovariance::from_matrix(linalg::symmetrize(
            &(&lambda0 * lambda0.transpose() + &sigma),
        ))
        .unwrap();
        let start = &lambda0 + random(10, 2, &mut rng) * 0.5;
        let prepared = PreparedSigma::new(&sigma, &s).unwrap();
        let before = prepared.neg_loglik(&start).unwrap();
        let after = prepared
            .neg_loglik(&prepared.em_step(&start).unwrap().lambda_next)
            .unwrap();
        assert!(after < before);
    }

    #[test]
    fn em_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lambda = random(7, 2, &mut rng);
        let sigma = random_spd(7, &mut rng);
        let s = linalg::symmetrize(&random_spd(7, &mut rng));
        let c: f64 = 2.5;
        let base = em_update_loadings(&lambda, &sigma, &SampleCovariance::from_matrix(s.clone()).unwrap()).unwrap();
        let scaled = em_update_loadings(
            &(&lambda * c.sqrt()),
            &(&sigma * c),
            &SampleCovariance::from_matrix(s * c).unwrap(),
        )
        .unwrap();
        assert!((scaled - base * c.sqrt()).amax() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, r) = (6, 2);
        let lambda = random(n, r, &mut rng);
        let sigma = random_spd(n, &mut rng);
        let s = SampleCovariance::from_matrix(linalg::symmetrize(&random_spd(n, &mut rng))).unwrap();
        let g = neg_loglik_gradient(&lambda, &sigma, &s).unwrap();
        let h = 1e-5;
        for i in 0..n {
            for j in 0..r {
                let mut plus = lambda.clone();
                plus[(i, j)] += h;
                let mut minus = lambda.clone();
                minus[(i, j)] -= h;
                let fd = (dense_neg_loglik(&plus, &sigma, s.matrix())
                    - dense_neg_loglik(&minus, &sigma, s.matrix()))
                    / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }
}
