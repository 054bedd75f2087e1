use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bench(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supbound")).args(args).output().expect("spawn supbound")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

#[test]
fn analyze_quickselect() {
    let p = bench("quickselect.toml");
    let out = run(&["analyze-prr", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["status"], "BOUND");
    let cstar = v["cstar"].as_f64().unwrap();
    assert!((cstar - 2.74).abs() < 0.02, "{cstar}");
}

#[test]
fn analyze_randomsearch_exponent() {
    let p = bench("randomsearch.toml");
    let out = run(&["analyze-prr", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let e = json(&out)["nstar_exponent"].as_f64().unwrap();
    assert!((e - 8.24).abs() < 0.1, "{e}");
}

#[test]
fn malformed_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[prr]\nname = \"x\"\ntoll = \n").unwrap();
    let out = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = run(&["analyze", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_loops() {
    for (name, beta) in [("rdwalk1.toml", 1.1547), ("rdwalk3.toml", 2.065)] {
        let p = bench(name);
        let out = run(&["analyze-loop", p.to_str().unwrap(), "--trials", "0"]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let b = json(&out)["beta"].as_f64().unwrap();
        assert!(((b - beta) / beta).abs() < 1e-3, "{name}: {b}");
    }
}

#[test]
fn zero_drift_is_infeasible() {
    let p = bench("zerodrift.toml");
    let out = run(&["analyze-loop", p.to_str().unwrap(), "--trials", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["status"], "INFEASIBLE");
}

#[test]
fn simulate_zero_trials_is_usage_error() {
    let p = bench("quickselect.toml");
    let out = run(&["simulate", p.to_str().unwrap(), "--nstar", "60", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_quickselect_below_bound() {
    let p = bench("quickselect.toml");
    let out = run(&["simulate", p.to_str().unwrap(), "--nstar", "60", "--trials", "100000", "--kappa", "12*n"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kappa,bound,empirical,wilson_upper_99,verdict"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "720");
    let bound: f64 = row[1].parse().unwrap();
    let emp: f64 = row[2].parse().unwrap();
    assert!(bound <= 9e-4 && emp <= bound, "{row:?}");
    assert_ne!(row[4], "FAIL");
}

#[test]
fn simulate_loop_csv() {
    let p = bench("rdwalk1.toml");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = run(&["simulate", p.to_str().unwrap(), "--kappa", "22", "--trials", "20000", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("22,"));
}

#[test]
fn verify_quicksort() {
    let p = bench("quicksort.toml");
    let p = p.to_str().unwrap();
    let out = run(&["verify", p, "--alpha", "2.3^(1/nstar)", "--nmax", "200"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("HOLDS"));

    let out = run(&["verify", p, "--alpha", "3.0", "--nmax", "200"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("VIOLATED at n = "));

    let out = run(&["verify", p, "--alpha", "3.0", "--nmax", "1"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn output_is_deterministic() {
    let q = bench("quickselect.toml");
    let r = bench("rdwalk1.toml");
    let cases: [Vec<&str>; 3] = [
        vec!["analyze", q.to_str().unwrap()],
        vec!["analyze-loop", r.to_str().unwrap(), "--trials", "5000", "--seed", "7"],
        vec!["simulate", q.to_str().unwrap(), "--nstar", "40", "--trials", "5000", "--kappa", "8*n,11*n"],
    ];
    for args in &cases {
        let a = run(args);
        let b = run(args);
        assert_eq!(a.status.code(), b.status.code());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn report_over_directory() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["quickselect.toml", "rdwalk1.toml"] {
        std::fs::copy(bench(name), dir.path().join(name)).unwrap();
    }
    let out = run(&["report", dir.path().to_str().unwrap(), "--trials", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v.as_array().unwrap().len(), 2);
}
