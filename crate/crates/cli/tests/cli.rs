use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn degenlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degenlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn record(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn hardy_bound_column_is_sixteen() {
    let dir = TempDir::new().unwrap();
    let out = degenlab(&["hardy", "--n", "128", "--samples", "5"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&dir.path().join("hardy.csv"));
    assert_eq!(rows.len(), 4 + 5);
    for row in &rows {
        assert_eq!(row[4].parse::<f64>().unwrap(), 16.0);
        assert!(row[1].parse::<f64>().unwrap() <= 16.0 * row[2].parse::<f64>().unwrap());
    }
}

#[test]
fn elliptic_sweep_defaults_give_decreasing_errors() {
    let dir = TempDir::new().unwrap();
    let out = degenlab(&["elliptic-sweep"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("elliptic-sweep.csv"));
    assert_eq!(rows.len(), 5);
    let ks: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ks, [2, 4, 8, 16, 32]);
    let errs: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn empty_config_file_applies_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "").unwrap();
    let out = degenlab(&["poincare", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rec = record(&dir.path().join("poincare.json"));
    assert_eq!(rec["status"], "ok");
    assert_eq!(rec["config"]["alpha"], 0.5);
    assert_eq!(rec["config"]["n"], 512);
    assert_eq!(rec["config"]["n_t"], 256);
    assert_eq!(rec["config"]["seed"], 42);
    assert_eq!(rec["config"]["theta"], 0.5);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "alpha = 0.3\nn = 64\nT = 0.5\n").unwrap();
    let out = degenlab(
        &[
            "ap-check",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "32",
            "--sweep-window",
            "0.2,0.8",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rec = record(&dir.path().join("ap-check.json"));
    assert_eq!(rec["config"]["alpha"], 0.3);
    assert_eq!(rec["config"]["n"], 32);
    assert_eq!(rec["config"]["t_final"], 0.5);
    assert_eq!(rec["config"]["sweep_window"], serde_json::json!([0.2, 0.8]));
}

#[test]
fn identical_runs_are_identical_apart_from_metadata() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = [
        "observability",
        "--n",
        "64",
        "--n-t",
        "32",
        "--samples",
        "4",
        "--seed",
        "7",
    ];
    assert_eq!(degenlab(&args, d1.path()).status.code(), Some(0));
    assert_eq!(degenlab(&args, d2.path()).status.code(), Some(0));
    let strip = |p: &Path| {
        let mut v = record(&p.join("observability.json"));
        v.as_object_mut().unwrap().remove("metadata");
        v
    };
    assert_eq!(strip(d1.path()), strip(d2.path()));
    assert_eq!(
        fs::read(d1.path().join("observability.csv")).unwrap(),
        fs::read(d2.path().join("observability.csv")).unwrap()
    );
}

#[test]
fn hum_reports_decreasing_terminal_norms() {
    let dir = TempDir::new().unwrap();
    let out = degenlab(
        &["hum", "--n", "64", "--n-t", "32", "--samples", "3"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&dir.path().join("hum.csv"));
    assert_eq!(rows.len(), 4);
    let norms: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        degenlab(&["no-such-command"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        degenlab(&["hardy", "--alpha", "1.5"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        degenlab(&["hum", "--epsilons", "0.1,-1"], dir.path())
            .status
            .code(),
        Some(1)
    );
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "alpah = 0.2\n").unwrap();
    let out = degenlab(&["poincare", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));
}

#[test]
fn unsatisfiable_window_is_a_violation_not_a_crash() {
    let dir = TempDir::new().unwrap();
    // The sweep error cannot decrease when the window lies inside every Ω_k.
    let out = degenlab(
        &[
            "elliptic-sweep",
            "--n",
            "64",
            "--sweep-window",
            "0.8,0.9",
            "--k-grid",
            "2,2,4",
        ],
        dir.path(),
    );
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 2);
    let rec = record(&dir.path().join("elliptic-sweep.json"));
    assert_eq!(rec["status"] == "violation", code == 2);
}
