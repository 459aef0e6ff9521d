use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kac")).args(args).output().expect("run kac")
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn contraction_run_writes_csv_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();
    let out = kac(&["contraction", "--n", "2", "--replicas", "20000", "--horizon", "2", "--grid", "9", "--seed", "7", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS] exact exponential decay"), "{stdout}");

    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    let name = dirs[0].file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("contraction-") && name.ends_with("-seed7"), "{name}");

    let csv = fs::read_to_string(dirs[0].join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,mean_cost2E,stderr_cost2E,mean_cost4,stderr_cost4,theory_cost2E");
    assert_eq!(lines.count(), 9);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dirs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["n_particles"], 2);
    assert_eq!(report["config"]["replicas"], 20000);
    assert_eq!(report["pass"], true);
    let lambda = report["rate_fit"]["lambda_hat"].as_f64().unwrap();
    assert!((lambda - 2.0).abs() < 0.05, "{lambda}");
    for verdict in report["verdicts"].as_array().unwrap() {
        assert!(verdict["tolerance"].as_str().unwrap().len() > 3);
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"n_particles": 3, "replicas": 10, "horizon": 1.0, "grid_points": 4, "seed": 3}"#).unwrap();
    let runs = tmp.path().join("runs");
    let out = kac(&["corollary", "--config", config.to_str().unwrap(), "--replicas", "50", "--out", runs.to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", stderr(&out));
    let dir = &run_dirs(&runs)[0];
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["n_particles"], 3);
    assert_eq!(report["config"]["replicas"], 50);
    assert_eq!(report["config"]["seed"], 3);
}

#[test]
fn unknown_config_key_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"n_partcles": 4}"#).unwrap();
    let out = kac(&["contraction", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_partcles"), "{}", stderr(&out));
}

#[test]
fn invalid_values_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();
    let out = kac(&["contraction", "--replicas", "0", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replicas"), "{}", stderr(&out));

    let out = kac(&["equilibrium", "--init-v", "cube", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));

    let out = kac(&["eigenfunction", "--formulation", "energy", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("formulation"), "{}", stderr(&out));

    let missing = tmp.path().join("missing.json");
    let out = kac(&["contraction", "--config", missing.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none(), "no run directory on error");
}

#[test]
fn exit_status_follows_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();
    for partner in ["quantile", "label"] {
        let out = kac(&["meanfield", "--m", "200", "--replicas", "20", "--partner", partner, "--out", out_dir]);
        let dir = run_dirs(tmp.path()).pop().unwrap();
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        let expected = if report["pass"] == true { 0 } else { 1 };
        assert_eq!(out.status.code(), Some(expected), "{partner}");
        fs::remove_dir_all(dir).unwrap();
    }
}

#[test]
fn csv_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let root = tmp.path().join(threads);
        let out = kac(&[
            "equivalence", "--replicas", "3000", "--seed", "11", "--threads", threads, "--out", root.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        csvs.push(fs::read(run_dirs(&root)[0].join("series.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
