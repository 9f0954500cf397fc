use std::path::Path;
use std::process::{Command, Output};

fn rfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfa")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = rfa(dir.path(), &["--seed", "5", "simulate", "--p", "12", "--sector-size", "4", "--t-len", "150", "--out", "d.csv"]);
    assert!(sim.status.success());
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 151);
    assert!(text.starts_with("date,A001,"));

    let fit = rfa(dir.path(), &["--rank", "3", "fit", "--input", "d.csv"]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert_eq!(v["method"], "rfa-gem");
    assert_eq!(v["loadings"].as_array().unwrap().len(), 12);
    assert_eq!(v["loadings"][0].as_array().unwrap().len(), 3);
    assert!(v["nu"].as_f64().unwrap() > 0.0);
    let trace = v["report"]["loglik_trace"].as_array().unwrap();
    assert_eq!(trace.len(), v["report"]["iterations"].as_u64().unwrap() as usize + 1);
}

#[test]
fn every_method_fits_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    assert!(rfa(dir.path(), &["simulate", "--p", "10", "--sector-size", "5", "--t-len", "120", "--out", "d.csv"]).status.success());
    for m in ["rfa-gem", "rfa-px", "scm", "stu-t", "gfa", "iter-pca"] {
        let out = rfa(dir.path(), &["--method", m, "fit", "--input", "d.csv"]);
        assert!(out.status.success(), "{m}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["method"], m);
        assert_eq!(v["sigma"].as_array().unwrap().len(), 10);
    }
}

#[test]
fn failures_emit_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = rfa(dir.path(), &["fit", "--input", "absent.csv"]);
    assert!(!missing.status.success());
    assert_eq!(stderr_json(&missing)["error"], "io");

    std::fs::write(dir.path().join("bad.csv"), "date,A,B\n2020-01-02,1,2\n2020-01-01,3,4\n").unwrap();
    let bad = rfa(dir.path(), &["fit", "--input", "bad.csv"]);
    assert!(!bad.status.success());
    assert_eq!(stderr_json(&bad)["error"], "non_monotone_date");

    let usage = rfa(dir.path(), &["--method", "lasso", "fit", "--input", "bad.csv"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(stderr_json(&usage)["error"], "usage");

    let px = rfa(dir.path(), &["simulate", "--p", "10", "--sector-size", "5", "--t-len", "100", "--missing", "0.3", "--out", "m.csv"]);
    assert!(px.status.success());
    let out = rfa(dir.path(), &["--method", "rfa-px", "fit", "--input", "m.csv"]);
    assert_eq!(stderr_json(&out)["error"], "unsupported");
}

#[test]
fn backtest_reports_each_method() {
    let dir = tempfile::tempdir().unwrap();
    assert!(rfa(dir.path(), &["simulate", "--p", "10", "--sector-size", "5", "--t-len", "160", "--scale", "0.01", "--out", "d.csv"]).status.success());
    let out = rfa(
        dir.path(),
        &["backtest", "--input", "d.csv", "--methods", "scm,gfa", "--lookback", "100", "--test-window", "20", "--returns-csv", "r.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        assert_eq!(r["windows_total"], 3);
        assert_eq!(r["daily"].as_array().unwrap().len(), 60);
        let w: f64 = r["windows"][0]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((w - 1.0).abs() < 1e-10);
    }
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
}
