use sparsefactor::linalg::{self, Mat};
use sparsefactor::panel::{canonical_correlations, sample_covariance};
use sparsefactor::sim::{generate_dgp, generate_dgp_with, run_replication, DgpConfig, EstimatorConfig};

fn idiosyncratic(truth: &sparsefactor::DgpTruth) -> Mat {
    truth.panel.values() - &truth.factors0 * truth.loadings0.transpose()
}

#[test]
fn long_run_covariance_matches_closed_form() {
    let truth = generate_dgp(10, 50_000, 31).unwrap();
    let u = idiosyncratic(&truth);
    let emp = u.tr_mul(&u) / 50_000.0;
    // compared on the correlation scale: the largest variances are near 5, where the
    // sampling error of a raw entry alone is about 0.03 at this length
    let s = &truth.sigma_u0;
    let worst = (0..10)
        .flat_map(|i| (0..10).map(move |j| (i, j)))
        .map(|(i, j)| (emp[(i, j)] - s[(i, j)]).abs() / (s[(i, i)] * s[(j, j)]).sqrt())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "max scaled entry gap {worst}");
}

#[test]
fn band_and_definiteness_across_seeds() {
    for seed in 0..20 {
        let truth = generate_dgp(15, 30, seed).unwrap();
        let s = &truth.sigma_u0;
        assert!(linalg::min_eigenvalue(s) > 0.0);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(s[(i, j)], s[(j, i)]);
                if i.abs_diff(j) > 3 {
                    assert_eq!(s[(i, j)], 0.0);
                }
            }
        }
        assert!(truth.loadings0.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn noiseless_panel_is_recovered_exactly() {
    let dgp = DgpConfig {
        noise_scale: 0.0,
        ..DgpConfig::default()
    };
    let truth = generate_dgp_with(30, 40, 8, &dgp).unwrap();
    assert_eq!(idiosyncratic(&truth).amax(), 0.0);
    let rec = run_replication(30, 40, 8, &EstimatorConfig::Pca, &dgp).unwrap();
    assert!((rec.loadings_cc.unwrap() - 1.0).abs() < 1e-8);
    assert!((rec.factors_cc.unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn identical_seeds_identical_draws() {
    let a = generate_dgp(12, 25, 1234).unwrap();
    let b = generate_dgp(12, 25, 1234).unwrap();
    assert_eq!(a.panel.values(), b.panel.values());
    assert_eq!(a.loadings0, b.loadings0);
    assert_eq!(a.factors0, b.factors0);
    assert_eq!(a.sigma_u0, b.sigma_u0);
}

#[test]
fn single_replication_metric_is_reproducible() {
    let cfg = EstimatorConfig::Pca;
    let a = run_replication(150, 100, 77, &cfg, &DgpConfig::default()).unwrap();
    let b = run_replication(150, 100, 77, &cfg, &DgpConfig::default()).unwrap();
    assert_eq!(a, b);
    let l = a.loadings_cc.unwrap();
    assert!(l > 0.0 && l < 1.0);
}

#[test]
fn sample_covariance_of_truth_panel_is_symmetric() {
    let truth = generate_dgp(20, 35, 3).unwrap();
    let s = sample_covariance(&truth.panel);
    assert_eq!(s.matrix(), &s.matrix().transpose());
    let rho = canonical_correlations(&truth.loadings0, &truth.loadings0).unwrap();
    assert!(rho.iter().all(|v| (v - 1.0).abs() < 1e-10));
}
