use std::path::Path;
use std::process::{Command, Output};

fn vvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvc")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_profiles_writes_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("days.csv");
    let res = vvc(&["synth-profiles", "--days", "2", "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().count() > 2 * 288);
}

#[test]
fn tiny_training_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let res = vvc(&[
        "train",
        "--episodes",
        "1",
        "--train-days",
        "1",
        "--eval-days",
        "1",
        "--batch-size",
        "8",
        "--out-dir",
        path(dir.path()),
        "--seed",
        "3",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("seed 3 held-out"), "{stdout}");
    let metrics = std::fs::read_to_string(dir.path().join("seed-3/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(dir.path().join("seed-3/fast.ckpt").exists());

    let eval = vvc(&[
        "evaluate",
        "--train-days",
        "1",
        "--eval-days",
        "1",
        "--checkpoints",
        path(&dir.path().join("seed-3")),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "episodes = 1\nnot_a_field = true\n").unwrap();
    let res = vvc(&["train", "--config", path(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    let res = vvc(&["train", "--alpha-fast", "-1", "--episodes", "1"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_checkpoints_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let res = vvc(&["evaluate", "--train-days", "1", "--checkpoints", path(dir.path())]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn baseline_evaluation_reports_a_cost() {
    let res = vvc(&["evaluate", "--train-days", "1", "--eval-days", "1", "--baseline", "1"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("cost=$"));
}
