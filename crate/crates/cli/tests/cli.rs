//! Black-box tests of the binary: flag handling, config files, exit codes,
//! and report determinism, all at small sizes.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pestov-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn pointwise_run_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "check",
        "pointwise",
        "--manifold",
        "torus:3",
        "--k",
        "1",
        "--seed",
        "7",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("PESTOV"), "per-record lines missing:\n{text}");
    assert!(text.lines().any(|l| l.starts_with("summary:")), "summary missing");
    let json = std::fs::read_to_string(&report).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["config"]["seed"], 7);
    assert!(parsed["records"].as_array().map(|a| !a.is_empty()).unwrap_or(false));
}

#[test]
fn identical_seeds_give_identical_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out = run(&[
            "check",
            "integrated",
            "--manifold",
            "torus:3",
            "--samples",
            "512",
            "--seed",
            "3",
            "--report",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "reports differ between identical runs"
    );
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "suite = pointwise\nmanifold = torus:3\nk = 1\nseed = 1\n# comment\nsamples = 64\n",
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["config"]["seed"], 2, "flag seed must beat config seed");
}

#[test]
fn configuration_errors_exit_two() {
    assert_eq!(run(&["check"]).status.code(), Some(2), "empty suite selection");
    assert_eq!(
        run(&["check", "pointwise", "--manifold", "mobius:3"]).status.code(),
        Some(2),
        "unknown manifold"
    );
    assert_eq!(run(&["check", "warp"]).status.code(), Some(2), "unknown suite");
    assert_eq!(
        run(&["check", "pointwise", "--fd-step", "tiny"]).status.code(),
        Some(2),
        "unparsable flag value"
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.cfg");
    std::fs::write(&cfg, "suite = pointwise\nwarp_factor = 9\n").unwrap();
    assert_eq!(
        run(&["check", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2),
        "unknown config key"
    );

    let out = bin()
        .args(["check", "pointwise", "--manifold", "torus:3", "--k", "1"])
        .env("PESTOV_LAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "bad thread cap");
}

#[test]
fn failed_checks_exit_one() {
    // An absurdly tight tolerance turns real residuals into failures.
    let out = run(&[
        "check",
        "pointwise",
        "--manifold",
        "sphere:2",
        "--k",
        "1",
        "--seed",
        "5",
        "--tolerance",
        "1e-18",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL"), "failed records should be printed:\n{text}");
}

#[test]
fn thread_cap_env_is_accepted() {
    let out = bin()
        .args(["check", "pointwise", "--manifold", "torus:3", "--k", "1", "--seed", "9"])
        .env("PESTOV_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
