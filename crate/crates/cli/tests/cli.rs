use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sparsefactor::linalg::{self, Mat};
use sparsefactor::panel::PanelData;
use sparsefactor::pca::pca_residual_covariance;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefactor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Mat {
    PanelData::read_csv(path, false).unwrap().into_values()
}

fn generated_panel(dir: &Path, n: &str, t: &str) -> std::path::PathBuf {
    let out = dir.join("dgp");
    let res = run(&["generate", "--n", n, "--t", t, "--seed", "3", "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out.join("panel.csv")
}

#[test]
fn estimate_pca_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generated_panel(dir.path(), "30", "40");
    let fit = dir.path().join("fit");
    let res = run(&["estimate", "--method", "pca", "--r", "2", "--input", p(&panel), "--out", p(&fit)]);
    assert_eq!(code(&res), 0);
    for f in ["loadings.csv", "factors.csv", "sigma_u.csv", "metadata.json", "effective_config.toml"] {
        assert!(fit.join(f).exists(), "{f} missing");
    }
    assert_eq!(read(&fit.join("loadings.csv")).shape(), (30, 2));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("method=pca") && stdout.contains("r=2"));
}

#[test]
fn twostep_output_satisfies_identification() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generated_panel(dir.path(), "40", "60");
    let fit = dir.path().join("fit");
    let res = run(&[
        "estimate", "--method", "twostep", "--C", "1.0", "--kernel", "scad", "--input", p(&panel),
        "--out", p(&fit),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let lambda = read(&fit.join("loadings.csv"));
    let sigma = read(&fit.join("sigma_u.csv"));
    assert!(linalg::min_eigenvalue(&sigma) > 0.0);
    let k = lambda.tr_mul(&sigma.clone().try_inverse().unwrap()) * &lambda;
    assert!(k[(0, 1)].abs() < 1e-6 * k[(0, 0)]);
    assert!(k[(0, 0)] >= k[(1, 1)]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["method"], "twostep");
}

#[test]
fn jointpml_writes_support_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generated_panel(dir.path(), "20", "50");
    let fit = dir.path().join("fit");
    let res = run(&["estimate", "--method", "jointpml", "--input", p(&panel), "--out", p(&fit)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let support = read(&fit.join("support.csv"));
    let sigma = read(&fit.join("sigma_u.csv"));
    for i in 0..20 {
        assert_eq!(support[(i, i)], 0.0);
        for j in 0..20 {
            if i != j {
                assert_eq!(support[(i, j)] == 1.0, sigma[(i, j)] != 0.0);
            }
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&run(&["estimate", "--input", "/nonexistent/panel.csv", "--out", p(&out)])), 2);
    assert_eq!(code(&run(&["estimate", "--bogus"])), 4);
    let panel = generated_panel(dir.path(), "60", "30");
    assert_eq!(code(&run(&["estimate", "--method", "nope", "--input", p(&panel), "--out", p(&out)])), 4);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "not_a_key = 1\n").unwrap();
    assert_eq!(code(&run(&["estimate", "--config", p(&cfg), "--input", p(&panel)])), 4);
    // no thresholding with N > T leaves the covariance singular
    let res = run(&[
        "estimate", "--method", "twostep", "--kernel", "hard", "--c", "0", "--input", p(&panel),
        "--out", p(&out),
    ]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_precedence_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generated_panel(dir.path(), "30", "40");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("input = {:?}\nmethod = \"pca\"\nr = 3\nc = 0.5\n", p(&panel))).unwrap();
    let first = dir.path().join("first");
    let res = run(&["estimate", "--config", p(&cfg), "--r", "2", "--out", p(&first)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let dumped = fs::read_to_string(first.join("effective_config.toml")).unwrap();
    assert!(dumped.contains("r = 2\n"), "flag should win over file");
    assert!(dumped.contains("c = 0.5\n"), "file should win over default");
    assert!(dumped.contains("kernel = \"scad\"\n"));

    let second = dir.path().join("second");
    let res = run(&["estimate", "--config", p(&first.join("effective_config.toml")), "--out", p(&second)]);
    assert_eq!(code(&res), 0);
    let again = fs::read_to_string(second.join("effective_config.toml")).unwrap();
    assert_eq!(again.replace(p(&second), p(&first)), dumped);
    assert_eq!(
        fs::read(first.join("loadings.csv")).unwrap(),
        fs::read(second.join("loadings.csv")).unwrap()
    );
}

#[test]
fn simulate_single_cell_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let res = run(&[
        "simulate", "--cells", "40x30", "--methods", "pca", "--reps", "1", "--out", p(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(out.join("report.json").exists());
    assert_eq!(code(&run(&["simulate", "--reps", "0", "--out", p(&out)])), 4);
}

#[test]
fn simulate_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for jobs in ["1", "2", "1"] {
        let out = dir.path().join(format!("mc{}", reports.len()));
        let res = run(&[
            "simulate", "--cells", "40x30,30x20", "--methods", "pca,dml,twostep", "--reps", "4",
            "--jobs", jobs, "--out", p(&out),
        ]);
        assert_eq!(code(&res), 0);
        reports.push((
            fs::read(out.join("report.csv")).unwrap(),
            fs::read(out.join("report.json")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn eigen_curve_grid_and_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generated_panel(dir.path(), "30", "60");
    let one = dir.path().join("one");
    let res = run(&[
        "eigen-curve", "--input", p(&panel), "--kernels", "hard", "--c-lower", "0.5", "--c-upper",
        "0.5", "--out", p(&one),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(one.join("curve_hard.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);

    let full = dir.path().join("full");
    let res = run(&["eigen-curve", "--input", p(&panel), "--out", p(&full)]);
    assert_eq!(code(&res), 0);
    let data = PanelData::read_csv(&panel, false).unwrap();
    let r = pca_residual_covariance(&data, 2).unwrap();
    let min_diag = r.diagonal().min();
    for kernel in ["hard", "scad"] {
        let text = fs::read_to_string(full.join(format!("curve_{kernel}.csv"))).unwrap();
        let last = text.lines().last().unwrap();
        let lam: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        assert!((lam - min_diag).abs() < 1e-9 * min_diag, "{lam} vs {min_diag}");
    }
}

#[test]
fn help_lists_defaults_for_every_flag() {
    for cmd in ["estimate", "generate", "simulate", "replicate-tables", "eigen-curve"] {
        let res = run(&[cmd, "--help"]);
        assert_eq!(code(&res), 0);
        let text = String::from_utf8_lossy(&res.stdout);
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            if line.contains("--help") || line.contains("--config") {
                continue;
            }
            assert!(line.contains("[default:"), "{cmd}: {line}");
        }
    }
}
