use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qcurv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcurv")).args(args).current_dir(dir).output().unwrap()
}

fn setup(config: &str) -> TempDir {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("c.json"), config).unwrap();
    d
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn kernel_table_and_manifest_rerun() {
    let d = setup(r#"{"n": 5, "sigma": 1.5, "kernel": {"t_min": 0.0, "t_max": 16.0}}"#);
    let o = qcurv(&["kernel", "--config", "c.json", "--out", "a"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&d.path().join("a/kernel.csv"));
    let vals: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
    let fit = json(&d.path().join("a/kernel_fit.json"));
    let slope = fit["fit"]["slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 0.02);

    let m = json(&d.path().join("a/manifest.json"));
    assert_eq!(m["command"], "kernel");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let o = qcurv(&["kernel", "--config", "a/manifest.json", "--out", "b"], d.path());
    assert!(o.status.success());
    for f in ["kernel.csv", "kernel_fit.json", "manifest.json"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    for cfg in [r#"{"n": 5"#, r#"{"n": 5}"#, r#"{"n": 5, "sigma": 1.5, "extra": 0}"#, r#"{"n": 2, "sigma": 1.5}"#] {
        let d = setup(cfg);
        let o = qcurv(&["kernel", "--config", "c.json", "--out", "a"], d.path());
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        let e: Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(e["error"], "config");
        assert!(!d.path().join("a").exists());
    }
    let d = setup(r#"{"n": 5, "sigma": 1.5}"#);
    assert_eq!(qcurv(&["toda", "--config", "c.json", "--tol", "-1"], d.path()).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    let d = setup(r#"{"n": 5, "sigma": 1.5, "delaunay": {"l_list": [1.5, 1.7, 1.8], "m": 300}}"#);
    let o = qcurv(&["delaunay", "--config", "c.json"], d.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn balance_two_points() {
    let d = setup(r#"{"n": 5, "sigma": 1.5, "balance": {"points": [[0,0,0,0,0],[4,0,0,0,0]], "q": [1, 1], "l": 3}}"#);
    let o = qcurv(&["balance", "--config", "c.json", "--out", "o", "--threads", "1"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&d.path().join("o/manifest.json"));
    let a = &m["constants"]["interaction"];
    let (a1, a2, a3) = (a["a1"].as_f64().unwrap(), a["a2"].as_f64().unwrap(), a["a3"].as_f64().unwrap());
    let rows = read_csv(&d.path().join("o/balance.csv"));
    let r: f64 = rows[0][2].parse().unwrap();
    // gamma = 1 at (5, 1.5)
    assert!((r - 4.0 / a2.sqrt()).abs() < 1e-10 * r);
    let a0: f64 = rows[0][4].parse().unwrap();
    assert!((a0 + a3 / (a1 * a2 * 4.0)).abs() < 1e-12);
}

#[test]
fn toda_identity() {
    let d = setup(r#"{"n": 5, "sigma": 1.5, "toda": {"kind": "dilation", "k": 50}}"#);
    let o = qcurv(&["toda", "--config", "c.json", "--out", "o"], d.path());
    assert!(o.status.success());
    let t = json(&d.path().join("o/toda.json"));
    assert!(t["identity_error"].as_f64().unwrap() < 1e-10);
    assert!(t["dense_gap"].as_f64().unwrap() < 1e-8);
    assert_eq!(read_csv(&d.path().join("o/toda.csv")).len(), 50);
}

#[test]
fn assemble_residual_small_run() {
    let d = setup(
        r#"{"n": 5, "sigma": 1.5, "assemble": {"l": 3.0, "near_per_point": 3, "transition_per_point": 1, "far": 3, "spot_checks": 0}}"#,
    );
    let o = qcurv(&["assemble-residual", "--config", "c.json", "--out", "o"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&d.path().join("o/beta.csv"));
    let b = |i: usize| -> f64 { rows[i][3].parse().unwrap() };
    // mirror-symmetric pair: equal dilation projections, opposite axial translations
    assert!((b(0) - b(6)).abs() < 1e-10 * b(0).abs());
    assert!((b(1) + b(7)).abs() < 1e-10 * b(1).abs());
    let samples = read_csv(&d.path().join("o/residual_samples.csv"));
    assert_eq!(samples.len(), 2 * 3 + 2 + 3 + 1);
    let rep = json(&d.path().join("o/residual.json"));
    assert!(rep["report"]["norm"]["total"].as_f64().unwrap() > 0.0);
}
