use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pnlrank(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnlrank"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PNLRANK_THREADS")
        .output()
        .expect("binary runs")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulated(dir: &Path, n: &str, seed: &str) {
    let out = pnlrank(&["simulate", "--nodes", "4", "--n", n, "--seed", seed, "--out", "sim/data.csv"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_dataset_sidecar_and_manifest() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "150", "5");
    let csv = std::fs::read_to_string(dir.path().join("sim/data.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 4);
    assert_eq!(csv.lines().count(), 151);
    let truth = json(dir.path().join("sim/data.truth.json"));
    assert_eq!(truth["seed"], 5);
    assert_eq!(truth["manifest"], "manifest.json");
    assert_eq!(truth["edges"].as_array().unwrap().len(), truth["coefficients"].as_array().unwrap().len());
    let man = json(dir.path().join("sim/manifest.json"));
    assert_eq!(man["status"], "ok");
    assert_eq!(man["artifacts"], serde_json::json!(["data.csv", "data.truth.json"]));
}

#[test]
fn simulate_is_reproducible_and_degree_four_has_four_coefficients() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = pnlrank(&["simulate", "--n", "80", "--degree", "4", "--seed", "9", "--out", "d.csv"], d.path());
        assert!(out.status.success());
    }
    for f in ["d.csv", "d.truth.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let truth = json(a.path().join("d.truth.json"));
    for c in truth["coefficients"].as_array().unwrap() {
        assert_eq!(c["beta"].as_array().unwrap().len(), 4);
    }
    let bad = pnlrank(&["simulate", "--n", "80", "--degree", "3", "--out", "e.csv"], a.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fit_rankg_gives_one_coefficient_per_predictor_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "200", "3");
    for out_dir in ["a", "b"] {
        let out = pnlrank(&["fit", "--data", "sim/data.csv", "--target", "X4", "--method", "rankg", "--out", out_dir], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a/fit.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/fit.json")).unwrap());
    let fit = json(dir.path().join("a/fit.json"));
    assert_eq!(fit["result"]["beta"].as_array().unwrap().len(), 3);
    assert_eq!(fit["result"]["converged"], true);
    let resid = std::fs::read_to_string(dir.path().join("a/residuals.csv")).unwrap();
    assert_eq!(resid.lines().count(), 201);
}

#[test]
fn fit_ranks_records_the_resolved_median_anchor() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "120", "4");
    let out = pnlrank(
        &["fit", "--data", "sim/data.csv", "--target", "X2", "--method", "ranks", "--y0", "median", "--out", "r"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sim/data.csv")).unwrap();
    let mut y: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    y.sort_by(f64::total_cmp);
    let median = 0.5 * (y[59] + y[60]);
    let man = json(dir.path().join("r/manifest.json"));
    assert_eq!(man["config"]["y0"].as_f64().unwrap(), median);
    let fit = json(dir.path().join("r/fit.json"));
    assert_eq!(fit["result"]["y0"].as_f64().unwrap(), median);
}

#[test]
fn unconverged_fit_exits_3_and_still_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "150", "1");
    let out = pnlrank(
        &["fit", "--data", "sim/data.csv", "--target", "X4", "--method", "rankg", "--max-iter", "1", "--out", "f"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let fit = json(dir.path().join("f/fit.json"));
    assert_eq!(fit["result"]["converged"], false);
    assert!(dir.path().join("f/residuals.csv").exists());
    assert_eq!(json(dir.path().join("f/manifest.json"))["exit_code"], 3);
}

#[test]
fn validation_errors_exit_2_with_a_manifest() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "50", "2");
    let out = pnlrank(&["fit", "--data", "sim/data.csv", "--target", "nope", "--method", "rankg", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown column"));
    assert_eq!(json(dir.path().join("v/manifest.json"))["status"], "invalid_input");
    let out = pnlrank(&["fit", "--data", "sim/data.csv", "--target", "X1", "--method", "rankg", "--pivot", "X2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spec_file_values_yield_to_flags() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "120", "6");
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"data": "sim/data.csv", "target": "X3", "method": "ranks", "out": "from-file"}"#,
    )
    .unwrap();
    let out = pnlrank(&["fit", "--spec", "spec.json", "--method", "rankg", "--out", "from-flag"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(dir.path().join("from-flag/fit.json"));
    assert_eq!(fit["method"], "rankg");
    assert_eq!(fit["target"], "X3");
    std::fs::write(dir.path().join("typo.json"), r#"{"methd": "ranks"}"#).unwrap();
    let out = pnlrank(&["fit", "--spec", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn order_writes_a_permutation_and_a_step_log() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "200", "3");
    let out = pnlrank(&["order", "--data", "sim/data.csv", "--method", "rankg", "--basis-degree", "2", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ord = json(dir.path().join("o/ordering.json"));
    let mut names: Vec<&str> = ord["order"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(ord["steps"].as_array().unwrap().len(), 3);
    names.sort();
    assert_eq!(names, ["X1", "X2", "X3", "X4"]);
    let log = std::fs::read_to_string(dir.path().join("o/steps.log")).unwrap();
    assert_eq!(log.matches("<- sink").count(), 3);
    assert!(log.contains("order: "));
}

#[test]
fn order_bandwidth_flags_resolve_per_side() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "120", "5");
    let args = ["order", "--data", "sim/data.csv", "--hsic-bw-mode", "unit", "--hsic-bw-e", "0.5", "--out", "o"];
    let out = pnlrank(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hsic = &json(dir.path().join("o/manifest.json"))["config"]["order_config"]["hsic"];
    assert_eq!(hsic["bandwidth_x"]["fixed"].as_f64(), Some(1.0));
    assert_eq!(hsic["bandwidth_e"]["fixed"].as_f64(), Some(0.5));
    let out = pnlrank(&["order", "--data", "sim/data.csv", "--hsic-bw-x", "-1", "--out", "bad"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn order_with_too_few_rows_exits_2() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path(), "6", "3");
    let out = pnlrank(&["order", "--data", "sim/data.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n > expanded dimension required"));
}

#[test]
fn benchmark_smoke_run_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    for (threads, out_dir) in [("1", "t1"), ("3", "t3")] {
        let out = pnlrank(
            &["benchmark", "--preset", "table4", "--reps", "2", "--nmax", "150", "--threads", threads, "--out", out_dir],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["table4.csv", "table4_cells.csv", "table4_replications.csv", "table4.json", "table4.svg"] {
        assert_eq!(
            std::fs::read(dir.path().join("t1").join(f)).unwrap(),
            std::fs::read(dir.path().join("t3").join(f)).unwrap(),
            "{f}"
        );
    }
    let table = std::fs::read_to_string(dir.path().join("t1/table4.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "n,RankG");
    assert!(rows[1].starts_with("100,") && rows[1].contains(" ± "));
    let svg = std::fs::read_to_string(dir.path().join("t1/table4.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    let man = json(dir.path().join("t1/manifest.json"));
    assert_eq!(man["threads"], 1);
    assert_eq!(man["cells"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_preset_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = pnlrank(&["benchmark", "--preset", "table99", "--out", "b"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = pnlrank(&["benchmark", "--preset", "custom", "--out", "b"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
