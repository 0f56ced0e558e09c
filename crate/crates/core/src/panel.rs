//! Panel data, sample covariance, spectral decomposition and the canonical-correlation
//! accuracy metric.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Observed `T x N` panel: row `t` is the cross-section observed at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: Mat,
}

impl PanelData {
    pub fn new(y: Mat) -> Result<Self> {
        if y.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "panel needs at least 2 time points, got {}",
                y.nrows()
            )));
        }
        if y.ncols() < 1 {
            return Err(Error::Dimension("panel needs at least one series".into()));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            let (t, i) = (pos % y.nrows(), pos / y.nrows());
            return Err(Error::InvalidInput(format!(
                "non-finite value at time {t}, series {i}"
            )));
        }
        Ok(Self { y })
    }

    pub fn values(&self) -> &Mat {
        &self.y
    }

    pub fn into_values(self) -> Mat {
        self.y
    }

    /// Number of time points `T`.
    pub fn t(&self) -> usize {
        self.y.nrows()
    }

    /// Cross-section size `N`.
    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    /// Reads a panel from CSV: rows are time points, columns are series.
    pub fn read_csv(path: &Path, has_header: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .enumerate()
                .map(|(col, field)| {
                    field.parse::<f64>().map_err(|_| {
                        Error::InvalidInput(format!(
                            "row {line}, column {col}: cannot parse {field:?} as a number"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::InvalidInput(format!(
                        "row {line} has {} columns, expected {}",
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let y = Mat::from_fn(t, n, |i, j| rows[i][j]);
        Self::new(y)
    }
}

/// Column-demeans the panel. The intercept of each series is absorbed here.
pub fn center_panel(panel: &PanelData) -> PanelData {
    let mut y = panel.y.clone();
    for mut col in y.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    PanelData { y }
}

/// Sample covariance `S_y` with divisor `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    s: Mat,
}

impl SampleCovariance {
    /// Wraps an existing symmetric matrix, e.g. a model-implied covariance.
    pub fn from_matrix(s: Mat) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if linalg::relative_asymmetry(&s) > 1e-12 {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        Ok(Self {
            s: linalg::symmetrize(&s),
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.s
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

pub fn sample_covariance(panel: &PanelData) -> SampleCovariance {
    let centered = center_panel(panel);
    let y = centered.values();
    let s = y.tr_mul(y) / y.nrows() as f64;
    SampleCovariance {
        s: linalg::symmetrize(&s),
    }
}

/// Eigenvalues in descending order with paired orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub eigenvalues: Vector,
    pub eigenvectors: Mat,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> Mat {
        let v = &self.eigenvectors;
        v * Mat::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

/// Symmetric eigen-decomposition with descending eigenvalues.
///
/// Inputs whose asymmetry exceeds 1e-10 relative to the largest entry are rejected.
pub fn spectral_decompose(s: &Mat) -> Result<SpectralDecomp> {
    if !s.is_square() {
        return Err(Error::Dimension("spectral decomposition needs a square matrix".into()));
    }
    if linalg::relative_asymmetry(s) > 1e-10 {
        return Err(Error::InvalidInput(
            "spectral decomposition requires a symmetric matrix".into(),
        ));
    }
    let (eigenvalues, eigenvectors) = linalg::sym_eigen_desc(&linalg::symmetrize(s));
    Ok(SpectralDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// Canonical correlations between the column spaces of `a` and `b`, descending.
///
/// Computed from the eigenvalues of `(A'A)^-1 A'B (B'B)^-1 B'A`, symmetrized through the
/// Cholesky factor of `A'A`. The accuracy metric used throughout is the last entry.
pub fn canonical_correlations(a: &Mat, b: &Mat) -> Result<Vector> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "canonical correlations need equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.ncols() == 0 || a.ncols() > a.nrows() {
        return Err(Error::Dimension(
            "canonical correlations need 1 <= r <= rows".into(),
        ));
    }
    let gram_a = a.tr_mul(a);
    let gram_b = b.tr_mul(b);
    check_full_rank(&gram_a, "first argument")?;
    check_full_rank(&gram_b, "second argument")?;
    let cross = a.tr_mul(b);
    let inner = &cross * linalg::spd_inverse(&gram_b, "B'B")? * cross.transpose();
    let chol_a = nalgebra::Cholesky::new(gram_a)
        .ok_or_else(|| Error::Singular("A'A is not positive definite".into()))?;
    let l = chol_a.l();
    let half = l
        .solve_lower_triangular(&inner)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let sym = l
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let sym = linalg::symmetrize(&sym);
    let mut rho: Vec<f64> = sym
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.clamp(0.0, 1.0).sqrt())
        .collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    Ok(Vector::from_vec(rho))
}

/// Smallest canonical correlation between two parameter matrices.
pub fn smallest_canonical_correlation(a: &Mat, b: &Mat) -> Result<f64> {
    let rho = canonical_correlations(a, b)?;
    Ok(rho[rho.len() - 1])
}

fn check_full_rank(gram: &Mat, which: &str) -> Result<()> {
    let vals = gram.clone().symmetric_eigenvalues();
    let max = vals.iter().fold(0.0_f64, |a, &v| a.max(v));
    let min = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if max <= 0.0 || min <= 1e-12 * max {
        return Err(Error::Singular(format!("{which} is not of full column rank")));
    }
    Ok(())
}

/// The benchmark rate `1/sqrt(N) + sqrt(log N / T)` and the row-wise sparsity mass
/// `max_i sum_j |Sigma_ij|^q` of a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub omega_t: f64,
    pub m_n: f64,
    pub q: f64,
}

/// Entries with magnitude below this count as zero when `q = 0`.
pub const ZERO_CUTOFF: f64 = 1e-14;

pub fn omega_t(n: usize, t: usize) -> f64 {
    let n = n as f64;
    1.0 / n.sqrt() + (n.ln() / t as f64).sqrt()
}

pub fn rate_diagnostics(sigma: &Mat, q: f64, n: usize, t: usize) -> Result<RateDiagnostics> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Parameter(format!("q must lie in [0, 1), got {q}")));
    }
    if n == 0 || t == 0 {
        return Err(Error::Parameter("N and T must be at least 1".into()));
    }
    let m_n = sigma
        .row_iter()
        .map(|row| {
            row.iter()
                .map(|v| {
                    if q == 0.0 {
                        if v.abs() > ZERO_CUTOFF {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v.abs().powf(q)
                    }
                })
                .sum::<f64>()
        })
        .fold(0.0_f64, f64::max);
    Ok(RateDiagnostics {
        omega_t: omega_t(n, t),
        m_n,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_short_or_non_finite_panels() {
        assert!(matches!(
            PanelData::new(Mat::zeros(1, 3)),
            Err(Error::Dimension(_))
        ));
        let mut y = Mat::zeros(3, 2);
        y[(1, 1)] = f64::NAN;
        assert!(matches!(PanelData::new(y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn centering_is_idempotent() {
        let p = PanelData::new(random_matrix(7, 4, 1)).unwrap();
        let once = center_panel(&p);
        let twice = center_panel(&once);
        assert!((once.values() - twice.values()).amax() < 1e-15);
    }

    #[test]
    fn centering_constant_column_gives_zero() {
        let mut y = random_matrix(5, 3, 2);
        y.column_mut(1).fill(4.25);
        let c = center_panel(&PanelData::new(y).unwrap());
        assert!(c.values().column(1).amax() == 0.0);
    }

    #[test]
    fn centered_column_means_vanish() {
        let y = random_matrix(5, 3, 3);
        let c = center_panel(&PanelData::new(y).unwrap());
        for j in 0..3 {
            // direct mean computation
            let mean: f64 = (0..5).map(|t| c.values()[(t, j)]).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_covariance() {
        let y = Mat::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = sample_covariance(&PanelData::new(y).unwrap());
        assert_eq!(s.matrix(), &Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let row = [0.3, -1.2, 5.0];
        let y = Mat::from_fn(4, 3, |_, j| row[j]);
        let s = sample_covariance(&PanelData::new(y).unwrap());
        assert!(s.matrix().amax() == 0.0);
    }

    #[test]
    fn covariance_matches_double_loop() {
        let y = random_matrix(10, 4, 4);
        let s = sample_covariance(&PanelData::new(y.clone()).unwrap());
        let means: Vec<f64> = (0..4).map(|j| y.column(j).mean()).collect();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for t in 0..10 {
                    acc += (y[(t, i)] - means[i]) * (y[(t, j)] - means[j]);
                }
                assert!((s.matrix()[(i, j)] - acc / 10.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_of_centered_panel_is_identical() {
        let p = PanelData::new(random_matrix(9, 5, 5)).unwrap();
        let a = sample_covariance(&p);
        let b = sample_covariance(&center_panel(&p));
        assert!((a.matrix() - b.matrix()).amax() < 1e-15);
    }

    #[test]
    fn spectral_identity_and_diagonal() {
        let d = spectral_decompose(&Mat::identity(3, 3)).unwrap();
        assert_eq!(d.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);

        let m = Mat::from_diagonal(&Vector::from_vec(vec![3.0, 1.0, 2.0]));
        let d = spectral_decompose(&m).unwrap();
        assert_eq!(d.eigenvalues.as_slice(), &[3.0, 2.0, 1.0]);
        let expected = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((d.eigenvectors - expected).amax() < 1e-14);
    }

    #[test]
    fn spectral_reconstruction_and_trace() {
        let a = random_matrix(6, 6, 6);
        let s = &a + a.transpose();
        let d = spectral_decompose(&s).unwrap();
        assert!((d.reconstruct() - &s).norm() < 1e-10);
        let vtv = d.eigenvectors.tr_mul(&d.eigenvectors);
        assert!((vtv - Mat::identity(6, 6)).amax() < 1e-10);
        assert!((d.eigenvalues.sum() - s.trace()).abs() < 1e-10 * s.trace().abs().max(1.0));
        for w in d.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn spectral_rejects_asymmetric() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(spectral_decompose(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn canonical_self_and_mixed() {
        let a = random_matrix(8, 2, 7);
        let rho = canonical_correlations(&a, &a).unwrap();
        assert!(rho.iter().all(|v| (v - 1.0).abs() < 1e-10));
        let h = Mat::from_row_slice(2, 2, &[2.0, -1.0, 0.5, 3.0]);
        let rho = canonical_correlations(&a, &(&a * h)).unwrap();
        assert!(rho.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn canonical_matches_two_by_two_eigen_brute_force() {
        let a = random_matrix(8, 2, 8);
        let b = random_matrix(8, 2, 9);
        let rho = canonical_correlations(&a, &b).unwrap();
        // direct eigenvalues of the non-symmetric 2x2 product via its characteristic polynomial
        let p = (a.tr_mul(&a)).try_inverse().unwrap()
            * a.tr_mul(&b)
            * (b.tr_mul(&b)).try_inverse().unwrap()
            * b.tr_mul(&a);
        let tr = p.trace();
        let det = p.determinant();
        let disc = (tr * tr / 4.0 - det).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = tr / 2.0 - disc;
        assert!((rho[0] - l1.sqrt()).abs() < 1e-10);
        assert!((rho[1] - l2.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn canonical_symmetric_in_arguments() {
        let a = random_matrix(12, 3, 10);
        let b = random_matrix(12, 3, 11);
        let ab = canonical_correlations(&a, &b).unwrap();
        let ba = canonical_correlations(&b, &a).unwrap();
        assert!((ab - ba).amax() < 1e-10);
    }

    #[test]
    fn canonical_rejects_rank_deficient() {
        let mut a = random_matrix(6, 2, 12);
        let c0 = a.column(0).clone_owned();
        a.set_column(1, &(c0 * 2.0));
        let b = random_matrix(6, 2, 13);
        assert!(matches!(
            canonical_correlations(&a, &b),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn rate_diagnostics_values() {
        let d = rate_diagnostics(&Mat::identity(100, 100), 0.0, 100, 100).unwrap();
        assert_eq!(d.m_n, 1.0);
        let expected = 0.1 + (100f64.ln() / 100.0).sqrt();
        assert!((d.omega_t - expected).abs() < 1e-15);
        assert!((d.omega_t - 0.3146).abs() < 1e-4);

        let tri = Mat::from_fn(6, 6, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        assert_eq!(rate_diagnostics(&tri, 0.0, 6, 10).unwrap().m_n, 3.0);
        assert!(rate_diagnostics(&tri, 1.0, 6, 10).is_err());
        assert!(rate_diagnostics(&tri, -0.1, 6, 10).is_err());
    }

    #[test]
    fn read_csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "a,b\n1.0,2\n3,4.5\n").unwrap();
        let p = PanelData::read_csv(&path, true).unwrap();
        assert_eq!(p.values(), &Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]));
        std::fs::write(&path, "1.0,2\n3,4.5\n").unwrap();
        let q = PanelData::read_csv(&path, false).unwrap();
        assert_eq!(p, q);
        std::fs::write(&path, "1.0,x\n3,4.5\n").unwrap();
        assert!(PanelData::read_csv(&path, false).is_err());
    }
}
