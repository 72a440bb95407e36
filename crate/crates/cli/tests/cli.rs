use std::path::Path;
use std::process::{Command, Output};

fn run(config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_weak-mfg"))
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

const UNCOUPLED: &str = r#"{"command": "solve", "solve": {"num_paths": 400, "num_steps": 10}}"#;

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(r#"{"command": "selftest"}"#, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn uncoupled_solve_converges_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(UNCOUPLED, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let residuals = std::fs::read_to_string(dir.path().join("out/residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 2);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/solve_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["converged"], true);
    assert_eq!(report["report"]["iterations"], 1);
    for name in ["marginals.csv", "controls.csv", "value.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{}", name);
    }
}

#[test]
fn artifacts_are_reproducible() {
    let config = r#"{"command": "solve", "model": {"name": "price_impact"},
        "solve": {"num_paths": 300, "num_steps": 10, "max_iters": 5}}"#;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(config, a.path(), &["--threads", "1"]);
    run(config, b.path(), &["--threads", "1"]);
    for name in ["solve_report.json", "residuals.csv", "marginals.csv", "controls.csv", "value.csv"] {
        let x = std::fs::read(a.path().join("out").join(name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{} differs", name);
    }
}

#[test]
fn seed_flag_changes_the_ensemble() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(UNCOUPLED, a.path(), &["--seed", "1"]);
    run(UNCOUPLED, b.path(), &["--seed", "2"]);
    let x = std::fs::read(a.path().join("out/value.csv")).unwrap();
    let y = std::fs::read(b.path().join("out/value.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for config in [
        r#"{"command": "solve", "bogus": 1}"#,
        r#"{"command": "solve", "model": {"name": "no_such_model"}}"#,
        r#"{"command": "solve", "solve": {"damping": 0.0}}"#,
        r#"{"command": "solve", "model": {"name": "price_impact", "params": {"sigma": -1}}}"#,
        "not json",
    ] {
        let out = run(config, dir.path(), &[]);
        assert_eq!(out.status.code(), Some(2), "{}: {}", config, String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn non_convergence_exits_with_three_and_still_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command": "solve", "model": {"name": "price_impact"},
        "solve": {"num_paths": 300, "num_steps": 10, "max_iters": 2,
                  "tol": {"moment_residual": 1e-14, "sliced_w1": 1e-14, "control_flow_residual": 1e-14}}}"#;
    let out = run(config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let residuals = std::fs::read_to_string(dir.path().join("out/residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 3);
}

#[test]
fn monotonicity_check_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command": "check-mono", "model": {"name": "gbm", "params": {"deviation_reward": 0.5}},
        "solve": {"num_paths": 500, "num_steps": 10}, "monotonicity": {"pairs": 5}}"#;
    let out = run(config, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/mono_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["pairs"].as_array().unwrap().len(), 5);
    assert_eq!(report["report"]["any_violation"], false);
}

#[test]
fn nplayer_run_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command": "nplayer", "solve": {"num_paths": 400, "num_steps": 10},
        "nplayer": {"n": 4, "rollouts": 3, "gap": {"num_paths": 400}}}"#;
    let out = run(config, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/nplayer_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["n"], 4);
    assert!(report["report"]["gap"]["gap"].is_number());
}
