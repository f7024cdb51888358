use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const DAMPING: &str = r#"{
    "command": "simulate",
    "seed": 11,
    "dt": 0.001,
    "t_final": 0.5,
    "n_trajectories": 2000,
    "record_every": 50,
    "model": {
        "kind": "general",
        "dim": 2,
        "hamiltonian": [{"coeff": 0.5, "op": "sigma_x"}],
        "channels": [{"label": "decay", "rate": 1.0, "op": "sigma_minus"}]
    },
    "initial": {"state": [[0, 0], [1, 0]]},
    "observables": [{"label": "z", "op": "sigma_z"}]
}"#;

fn tnpq(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_tnpq"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

/// Data rows of a CSV file as `(columns, rows)`, skipping `#` comments.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let cols = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (cols, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (cols, rows) = read_csv(path);
    let k = cols.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

#[test]
fn simulate_trace_preserving_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = tnpq(dir.path(), DAMPING, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in ["results.csv", "results.json", "meta.json"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let trace = column(&o.join("results.csv"), "trace_est");
    assert_eq!(trace.len(), 11);
    assert!(trace.iter().all(|&t| t == 1.0));

    let csv = fs::read_to_string(o.join("results.csv")).unwrap();
    let meta: Value = serde_json::from_str(&fs::read_to_string(o.join("meta.json")).unwrap()).unwrap();
    let hash = meta["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(csv.contains(&format!("# config_sha256: {hash}\n# seed: 11\n")));

    let json: Value = serde_json::from_str(&fs::read_to_string(o.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 11);
    assert_eq!(json["columns"][0], "t");
}

#[test]
fn rerun_is_byte_identical_and_seed_overrides() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(tnpq(a.path(), DAMPING, &[]).status.code(), Some(0));
    assert_eq!(tnpq(b.path(), DAMPING, &["--threads", "3"]).status.code(), Some(0));
    let read = |d: &Path| fs::read(d.join("out/results.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let c = tempfile::tempdir().unwrap();
    assert_eq!(tnpq(c.path(), DAMPING, &["--seed", "12"]).status.code(), Some(0));
    let csv = fs::read_to_string(c.path().join("out/results.csv")).unwrap();
    assert!(csv.contains("# seed: 12\n"));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn divisibility_adjoint_heisenberg_shows_negativity() {
    let cfg = r#"{
        "command": "divisibility",
        "dt": 0.001,
        "t_final": 0.3,
        "model": {"kind": "heisenberg_qubit",
                  "eps": 20,
                  "gamma_minus": {"kind": "exponential", "scale": 2, "rate": -3},
                  "gamma_plus": 0.1},
        "divisibility": {"adjoint": true}
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let out = tnpq(dir.path(), cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("out/results.csv");
    let (cols, _) = read_csv(&path);
    assert_eq!(cols, ["t", "min_choi_eig", "second_min", "third_min", "max_bloch_norm"]);
    let min = column(&path, "min_choi_eig");
    assert_eq!(min.len(), 300);
    assert!(min.iter().any(|&x| x < -1e-6));
}

#[test]
fn exact_command_reports_trace() {
    let cfg = DAMPING.replace("\"simulate\"", "\"exact\"");
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tnpq(dir.path(), &cfg, &[]).status.code(), Some(0));
    let path = dir.path().join("out/results.csv");
    let trace = column(&path, "trace");
    assert!(trace.iter().all(|t| (t - 1.0).abs() < 1e-12));
    assert_eq!(column(&path, "z")[0], -1.0);
}

#[test]
fn moments_writes_tilted_table() {
    let cfg = r#"{
        "command": "moments",
        "seed": 2,
        "photon_counting": {"n_max": 14, "t_final": 0.2, "k_max": 2, "n_trajectories": 500, "record_points": 2}
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let out = tnpq(dir.path(), cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (cols, rows) = read_csv(&dir.path().join("out/results.csv"));
    assert_eq!(cols, ["t", "mu_0", "mu_1", "mu_2", "se_1", "se_2", "exact_1", "exact_2"]);
    assert_eq!(rows.len(), 3);
    let zeta = column(&dir.path().join("out/tilted.csv"), "zeta");
    assert_eq!(zeta.len(), 9);
}

#[test]
fn heisenberg_command_runs() {
    let cfg = r#"{"command": "heisenberg", "t_final": 0.1, "n_trajectories": 400,
                  "heisenberg": {"record_points": 2}}"#;
    let dir = tempfile::tempdir().unwrap();
    let out = tnpq(dir.path(), cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let x = column(&dir.path().join("out/results.csv"), "x_est");
    assert!((x[0] - 0.6).abs() < 1e-12);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = DAMPING.replace("\"seed\": 11,", "\"seed\": 11, \"unknown\": true,");
    let out = tnpq(dir.path(), &bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));
    assert!(!dir.path().join("out").exists());

    let out = tnpq(dir.path(), "{not json", &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = tnpq(dir.path(), DAMPING, &["--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_with_context() {
    let cfg = DAMPING.replace("\"rate\": 1.0", "\"rate\": -1.0");
    let dir = tempfile::tempdir().unwrap();
    let out = tnpq(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("negative jump probability"), "{err}");
    assert!(err.contains("seed 11"), "{err}");
}
