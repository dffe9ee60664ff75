use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("c.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&lab(&[])), 2);
    assert_eq!(code(&lab(&["unlearn"])), 2);
    assert_eq!(code(&lab(&["frobnicate"])), 2);
}

#[test]
fn missing_config_file_exits_2() {
    let o = lab(&["unlearn", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "seed = 1\n");
    let o = lab(&["pretrain", "--config", s(&c), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("target_subgroup"), "{}", stderr(&o));
}

#[test]
fn incomplete_section_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "seed = 1\ntarget_subgroup = 0\n[stages]\nforget_lr = 0.1\n");
    let o = lab(&["unlearn", "--config", s(&c), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing field"), "{}", stderr(&o));
}

#[test]
fn section_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("tiny.toml"))
        .unwrap()
        .replace("[pretrain]\n", "[pretrain]\nseed = 9\n");
    let c = write_config(dir.path(), &text);
    let o = lab(&["pretrain", "--config", s(&c), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("[pretrain] sets `seed`"), "{}", stderr(&o));
}

#[test]
fn unknown_method_and_axis_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = fixture("tiny.toml");
    let o = lab(&["baseline", "--config", s(&tiny), "--out-dir", s(dir.path()), "--method", "SCRUB"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown baseline"));
    let o = lab(&["sweep", "--config", s(&tiny), "--out-dir", s(dir.path()), "--axis", "lr", "--values", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown sweep axis"));
}

#[test]
fn missing_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = fixture("tiny.toml");
    let o = lab(&[
        "unlearn",
        "--config",
        s(&tiny),
        "--out-dir",
        s(dir.path()),
        "--original",
        "/nonexistent/original.ckpt",
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn pretrain_unlearn_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let tiny = fixture("tiny.toml");
    let o = lab(&["pretrain", "--config", s(&tiny), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = lab(&["unlearn", "--config", s(&tiny), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.starts_with("alpha "), "{stdout}");
    assert!(stdout.contains("\nsuite,direction,acc_ori,acc_unlearn,ratio\n"));

    let runs: Vec<PathBuf> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1, "pretrain and unlearn share one run directory");
    let run = &runs[0];
    for rel in [
        "checkpoints/original.ckpt",
        "checkpoints/forgotten.ckpt",
        "checkpoints/reminded.ckpt",
        "checkpoints/restored.ckpt",
        "logs/layer_scores.json",
        "reports/restored.csv",
        "task",
    ] {
        assert!(run.join(rel).exists(), "{rel} missing");
    }

    // a second unlearn reproduces the same artifacts, so the store accepts it
    let again = lab(&["unlearn", "--config", s(&tiny), "--out-dir", s(&out)]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(again.stdout, o.stdout);

    let eval_dir = dir.path().join("eval");
    let e = lab(&[
        "eval",
        "--original",
        s(&run.join("checkpoints/original.ckpt")),
        "--candidate",
        s(&run.join("checkpoints/restored.ckpt")),
        "--task",
        s(&run.join("task")),
        "--out-dir",
        s(&eval_dir),
    ]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let csv = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    let printed: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(csv.lines().collect::<Vec<_>>(), printed);

    let bad = lab(&[
        "eval",
        "--original",
        s(&run.join("checkpoints/original.ckpt")),
        "--candidate",
        s(&run.join("checkpoints/restored.ckpt")),
        "--task",
        s(&dir.path().join("no-task")),
        "--out-dir",
        s(&eval_dir),
    ]);
    assert_ne!(code(&bad), 0);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = fixture("tiny.toml");
    let a = lab(&["pretrain", "--config", s(&tiny), "--out-dir", s(dir.path())]);
    let b = lab(&["pretrain", "--config", s(&tiny), "--out-dir", s(dir.path()), "--seed", "4"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}
