use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn micro() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/micro")
}

fn nersynth(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nersynth"))
        .arg("--config")
        .arg(micro().join("config.toml"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn stages_in_order_then_cost() {
    let out = tempfile::tempdir().unwrap();
    for verb in ["attrs", "generate", "correct", "export"] {
        let o = nersynth(out.path(), &[verb]);
        assert_eq!(code(&o), 0, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(manifest["stage"], verb);
    }
    assert!(out.path().join("export/train.conll").is_file());
    assert!(out.path().join("export/train.weights").is_file());

    let gold = micro().join("gold.conll");
    let o = nersynth(out.path(), &["eval", "--gold", gold.to_str().unwrap(), "--pred", gold.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.0000"));

    let o = nersynth(out.path(), &["cost"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).lines().last().unwrap().starts_with("total"));
}

#[test]
fn missing_prerequisite_exits_4() {
    let out = tempfile::tempdir().unwrap();
    let o = nersynth(out.path(), &["export"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("needs"));
}

#[test]
fn config_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nersynth"))
        .args(["--config", "/nonexistent/config.toml", "attrs"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);

    let bad = out.path().join("bad.toml");
    std::fs::write(&bad, "variant = \"nonsense\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nersynth"))
        .arg("--config")
        .arg(&bad)
        .arg("attrs")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_with_other_seed_fails_on_miss() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(code(&nersynth(out.path(), &["attrs"])), 0);
    let o = nersynth(out.path(), &["--seed", "99", "generate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no recorded response"));
}

#[test]
fn synthetic_backend_override_runs_offline() {
    let out = tempfile::tempdir().unwrap();
    for verb in ["attrs", "generate"] {
        let o = nersynth(out.path(), &["--backend", "synthetic", "--seed", "3", verb]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unknown_backend_is_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = nersynth(out.path(), &["--backend", "carrier-pigeon", "attrs"]);
    assert_eq!(code(&o), 2);
}
