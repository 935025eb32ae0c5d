use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const LAMINATE: &str = r#"{ "kind": "laminate", "params": { "axis": 1, "a_low": 1.0, "a_high": 2.0, "theta": 0.5 } }"#;

fn stablenorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stablenorm")).args(args).output().unwrap()
}

fn run_config(dir: &Path, cmd: &str, config: &str) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    stablenorm(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

#[test]
fn homogeneous_fan_writes_sixteen_certified_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{ "medium": { "kind": "homogeneous" }, "n": 16, "fan": { "directions": 16 } }"#;
    let o = run_config(dir.path(), "fan", config);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/fan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "angle,px,py,phi,gap,certified,sgx,sgy");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 16);
    for r in &rows {
        assert_eq!(r[5], "true");
        assert!((r[3].parse::<f64>().unwrap() - 1.0).abs() <= 0.02);
    }
    let m = manifest(dir.path());
    let digest = format!("{:x}", Sha256::digest(config.as_bytes()));
    assert_eq!(m["config_digest"], digest.as_str());
    assert_eq!(m["certified"], true);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "fan.csv"));
}

#[test]
fn phi_prints_the_value_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "phi",
        r#"{ "medium": { "kind": "homogeneous" }, "n": 16, "phi": { "p": [1.0, 0.0] } }"#,
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("phi((1,0)) = 1.000"), "{}", stdout(&o));
}

#[test]
fn laminate_phi_matches_the_exact_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"{{ "medium": {LAMINATE}, "n": 32, "solver": {{ "tol_gap": 1e-4, "max_iters": 100000 }},
            "phi": {{ "p": [0.0, 1.0], "dump_fields": true }} }}"#
    );
    let o = run_config(dir.path(), "phi", &config);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/phi.json")).unwrap()).unwrap();
    assert!((summary["primal"].as_f64().unwrap() - 1.0).abs() <= 0.01);
    for f in ["v.csv", "v.json", "z.csv", "z.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_keys_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "phi",
        r#"{ "medium": { "kind": "homogeneous" }, "phi": { "p": [1.0, 0.0] }, "colour": 3 }"#,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert!(!dir.path().join("out/manifest.json").exists());
}

#[test]
fn missing_block_and_missing_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), "fan", r#"{ "medium": { "kind": "homogeneous" } }"#);
    assert_eq!(o.status.code(), Some(1));
    let o = stablenorm(&["iso"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage"));
    let o = stablenorm(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn uncertified_solve_exits_two_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"{{ "medium": {LAMINATE}, "n": 32, "solver": {{ "max_iters": 50, "tol_gap": 1e-8 }},
            "phi": {{ "p": [0.0, 1.0] }} }}"#
    );
    let o = run_config(dir.path(), "phi", &config);
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.path().join("out/phi.json").exists());
    let m = manifest(dir.path());
    assert_eq!(m["certified"], false);
    assert_eq!(m["tasks"][0]["certified"], false);
}

#[test]
fn laminate_facet_at_e2_is_a_kink() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"{{ "medium": {LAMINATE}, "n": 32, "solver": {{ "tol_gap": 1e-5, "max_iters": 200000 }},
            "facets": {{ "p": [[0, 1]], "options": {{ "q_max": 1.0 }} }} }}"#
    );
    let o = run_config(dir.path(), "facets", &config);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("verdict Kink"));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/facets.json")).unwrap()).unwrap();
    let opening = reports[0]["probes"][0]["opening"].as_f64().unwrap();
    assert!((opening - 3f64.sqrt()).abs() <= 0.1 * 3f64.sqrt(), "{opening}");
}

#[test]
fn iso_oracle_mode_reports_a_match() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{ "medium": { "kind": "smooth-trig", "params": { "a_bar": 1.5, "beta": 0.6 } },
        "iso": { "params": { "n": 5, "side": 1.0, "volume": 0.36 }, "oracle": true } }"#;
    let o = run_config(dir.path(), "iso", config);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ORACLE MATCH"), "{}", stdout(&o));
    let mask = std::fs::read_to_string(dir.path().join("out/iso_mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 1 + 9);
}

#[test]
fn penalty_threshold_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{ "medium": { "kind": "homogeneous" },
        "iso": { "params": { "n": 16, "side": 2.0, "volume": 0.5 }, "threshold_doublings": 8 } }"#;
    let o = run_config(dir.path(), "iso", config);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let m = manifest(dir.path());
    let mu = m["penalty_threshold"].as_f64().unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/iso_threshold.json")).unwrap()).unwrap();
    assert_eq!(report["mu"].as_f64().unwrap(), mu);
    assert_eq!(report["agree"], true);
}

#[test]
fn repeated_runs_write_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = format!(
        r#"{{ "medium": {LAMINATE}, "n": 16, "fan": {{ "directions": 16 }},
            "iso": {{ "params": {{ "n": 24, "side": 2.0, "volume": 0.6, "band": {{}} }} }} }}"#
    );
    for cmd in ["fan", "iso"] {
        run_config(a.path(), cmd, &config);
        run_config(b.path(), cmd, &config);
    }
    for f in ["fan.csv", "iso_mask.csv", "iso_u.csv"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn selftest_passes_and_catches_a_broken_adjoint() {
    let o = stablenorm(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = stablenorm(&["selftest", "--inject-fault", "adjointness"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL gradient/divergence adjointness"));
}
