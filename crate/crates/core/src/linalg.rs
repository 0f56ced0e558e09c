//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Maximum absolute asymmetry `|m_ij - m_ji|` relative to the largest entry.
pub fn relative_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    let scale = max_abs(m);
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
///
/// Each eigenvector is signed so its first component with magnitude above 1e-12 is
/// positive; the stable sort keeps solver order among exactly tied eigenvalues.
pub fn sym_eigen_desc(m: &Mat) -> (Vector, Mat) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Cholesky factorization, reporting the smallest eigenvalue on failure.
pub fn cholesky(m: &Mat, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        context: context.to_string(),
        min_eigenvalue: min_eigenvalue(m),
    })
}

/// `log|det m|` from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a small symmetric positive definite matrix; `Singular` otherwise.
pub fn spd_inverse(m: &Mat, context: &str) -> Result<Mat> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(context.to_string()))
}

/// Flips columns so the largest-magnitude entry of each column is positive.
/// Returns the applied signs.
pub fn fix_column_signs(m: &mut Mat) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut best = 0.0_f64;
        let mut best_val = 0.0_f64;
        for v in m.column(j).iter() {
            if v.abs() > best {
                best = v.abs();
                best_val = *v;
            }
        }
        let s = if best_val < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            m.column_mut(j).neg_mut();
        }
        signs.push(s);
    }
    signs
}

pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    // tr(A B) for conformable A (n x m), B (m x n)
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        acc += a.row(i).transpose().dot(&b.column(i));
    }
    acc
}
