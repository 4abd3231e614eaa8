//! End-to-end checks of the command-line interface.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hwnetlab"))
}

fn write_config(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const N_NETWORK: &str = r#"
classes = 2
pools = 2
edges = [[1, 1], [2, 1], [1, 2]]
lambda = [1.5, 0.5]
nu = [1.0, 0.5]
nu_hat = [1.0, 0.0]

[mu]
"1-1" = 1.0
"2-1" = 1.0
"1-2" = 2.0
"#;

const N_NETWORK_OVERLOADED: &str = r#"
classes = 2
pools = 2
edges = [[1, 1], [2, 1], [1, 2]]
lambda = [1.5, 0.5]
nu = [1.0, 0.5]
nu_hat = [-1.0, 0.0]

[mu]
"1-1" = 1.0
"2-1" = 1.0
"1-2" = 2.0
"#;

#[test]
fn statics_reports_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "n.toml", N_NETWORK);
    let out = bin()
        .args(["statics"])
        .arg(&cfg)
        .args(["--n", "100,400"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["class_tag"], "dominant-pool");
    assert!((v["rho"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(v["rho_n"][0][0], 100);
    assert!((v["rho_n"][0][1].as_f64().unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn statics_accepts_json_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "n.json",
        r#"{"classes": 2, "pools": 2, "edges": [[1,1],[2,1],[1,2]],
            "lambda": [1.5, 0.5], "mu": {"1-1": 1.0, "2-1": 1.0, "1-2": 2.0},
            "nu": [1.0, 0.5], "nu_hat": [1.0, 0.0]}"#,
    );
    let out = bin().arg("statics").arg(&cfg).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "bad.toml", "classes = 1\n");
    let out = bin().arg("statics").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_ctmc_emits_jsonl_and_csv_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "n.toml", N_NETWORK);
    let csv = dir.path().join("path.csv");
    let out = bin()
        .args(["simulate-ctmc"])
        .arg(&cfg)
        .args(["--n", "25", "--horizon", "5", "--reps", "2", "--seed", "3"])
        .arg("--dump-path")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<_> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.to_string())
        .collect();
    assert_eq!(lines.len(), 2, "one JSONL summary per replication");
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["n"], 25);
        assert!(v["events"].as_u64().unwrap() > 0);
    }
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = csv_text.lines();
    assert_eq!(rows.next().unwrap(), "t,x1,x2,z1-1,z1-2,z2-1");
    assert!(csv_text.lines().count() > 10);
}

#[test]
fn simulate_sde_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "n.toml", N_NETWORK);
    let out = bin()
        .args(["simulate-sde"])
        .arg(&cfg)
        .args(["--horizon", "10", "--reps", "2", "--seed", "1", "--centered"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn certify_drift_limit_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "n.toml", N_NETWORK);
    // The default radius (200) comfortably contains the positive core
    // (~60 for this instance); at much smaller radii the certificate is
    // correctly inconclusive.
    let out = bin().args(["certify"]).arg(&cfg).arg("--limit").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["certificate"]["passed"], true);
    assert!((v["certificate"]["theta"].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn certify_prelimit_guards_n0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "n.toml", N_NETWORK);
    // Below n0 and not forced: a clean error (exit 2), not a bogus pass.
    let out = bin()
        .args(["certify"])
        .arg(&cfg)
        .args(["--n", "100", "--radius", "50"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n0"));
}

#[test]
fn certify_transience_passes_on_overloaded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "o.toml", N_NETWORK_OVERLOADED);
    let out = bin()
        .args(["certify"])
        .arg(&cfg)
        .args(["--mode", "transience", "--radius", "50"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["passed"], true);
}

#[test]
fn experiment_exit_code_tracks_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "o.toml", N_NETWORK_OVERLOADED);
    let csv = dir.path().join("est.csv");
    let out = bin()
        .args(["experiment", "transience"])
        .arg(&cfg)
        .args(["--n", "25", "--horizon", "100", "--reps", "6", "--seed", "2"])
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"]["status"], "pass");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("experiment,name"));

    // Inapplicable experiment (idleness with rho < 0) exits 2.
    let out = bin()
        .args(["experiment", "idleness"])
        .arg(&cfg)
        .args(["--horizon", "10", "--reps", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
