use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebsde-lab"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn degenerate(sub: &[&str], out: &Path) -> Output {
    let cfg = config("degenerate.json");
    let mut args = sub.to_vec();
    args.extend(["--config", cfg.to_str().unwrap(), "--paths", "200"]);
    lab(&args, out)
}

#[test]
fn check_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = degenerate(&["check"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "manifest.json", "flags.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn solve_reports_pass_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = degenerate(&["solve", "--mu", "1.0"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    for key in ["tool", "version", "command", "seed", "tol", "grid", "paths", "horizon", "config", "outputs"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }
    assert_eq!(manifest["paths"], 200);
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(config("degenerate.json")).unwrap()).unwrap();
    cfg["run"]["expect"]["lambda"]["value"] = serde_json::json!(1.0);
    let path = dir.path().join("wrong.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = lab(&["solve", "--config", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL lambda"));
}

// λ does not depend on μ for the degenerate model, so there is nothing to invert.
#[test]
fn flat_curve_inversion_is_a_typed_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = degenerate(&["invert", "--lambda", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ergodic_solver") && err.contains("remedy"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"domain": {"kind": "ball", "radius": 1.0, "dim": 1}, "bogus": 1}"#).unwrap();
    let o = lab(&["check", "--config", bad.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    let o = lab(&["check"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn outputs_are_deterministic_per_seed() {
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = degenerate(&["verify", "--seed", seed, "--grid", "401"], dir.path());
        assert!(o.status.code().is_some_and(|c| c < 2), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join("bsde_residuals.csv")).unwrap()
    };
    let a = run("3");
    assert_eq!(a, run("3"));
    assert_ne!(a, run("4"));
}
