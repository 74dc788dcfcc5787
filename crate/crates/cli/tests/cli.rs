use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opic_core::io::{read_train_log, Manifest, TRAIN_LOG};
use tempfile::TempDir;

fn opic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opic"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("OPIC_NUM_THREADS", "2")
        .output()
        .expect("run opic")
}

fn ok(args: &[&str]) -> String {
    let o = opic(args);
    assert!(
        o.status.success(),
        "opic {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A level-2 dataset with an otherwise default configuration.
fn small_dataset(tmp: &TempDir) -> std::path::PathBuf {
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, "[synth]\nlevel = 2\nn_train = 12\nn_val = 4\nn_test = 5\n\n[net]\nwidths = [4, 8]\n").unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    data
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(opic(&[]).status.code(), Some(2));
    assert_eq!(opic(&["synth", "--config", "/nonexistent.toml", "--out", "/tmp/x"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[synth]\nlevle = 3\n").unwrap();
    assert_eq!(opic(&["synth", "--config", p(&bad), "--out", p(tmp.path())]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_opic"))
        .args(["report", "--data", p(tmp.path())])
        .env("OPIC_NUM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_code_three() {
    let tmp = TempDir::new().unwrap();
    let o = opic(&["eval", "--data", p(&tmp.path().join("missing")), "--predictions", p(tmp.path()), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn default_task_layout_and_holdout_audit() {
    let tmp = TempDir::new().unwrap();
    let data = small_dataset(&tmp);
    let m: Manifest = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.tasks.len(), 12);
    let groups: std::collections::BTreeSet<_> = m.tasks.iter().map(|t| t.group.clone()).collect();
    assert_eq!(groups.len(), 4);

    let ckpt = tmp.path().join("ckpt");
    let cfg = tmp.path().join("small.toml");
    ok(&[
        "train", "--data", p(&data), "--out", p(&ckpt), "--config", p(&cfg), "--epochs", "2", "--holdout-group", "G3",
    ]);
    let log = read_train_log(&ckpt.join(TRAIN_LOG)).unwrap();
    // epoch 0 is the initialization and reads nothing
    let train_lines: Vec<_> = log.iter().filter(|l| l.split == "train" && l.epoch > 0).collect();
    assert_eq!(train_lines.len(), 2);
    for l in train_lines {
        let read = l.tasks_read.as_ref().unwrap();
        assert_eq!(read.len(), 9);
        assert!(read.iter().all(|t| !t.starts_with("G3_")), "{read:?}");
    }
}

#[test]
fn eval_is_independent_of_directory_order() {
    let tmp = TempDir::new().unwrap();
    let data = small_dataset(&tmp);
    let ckpt = tmp.path().join("ckpt");
    let cfg = tmp.path().join("small.toml");
    ok(&["train", "--data", p(&data), "--out", p(&ckpt), "--config", p(&cfg), "--epochs", "1", "--holdout-group", "G1"]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["predict", "--data", p(&data), "--out", p(&a), "--checkpoint", p(&ckpt)]);
    ok(&["predict", "--data", p(&data), "--out", p(&b), "--linear"]);
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    ok(&["eval", "--data", p(&data), "--predictions", p(&a), "--predictions", p(&b), "--out", p(&e1)]);
    ok(&["eval", "--data", p(&data), "--predictions", p(&b), "--predictions", p(&a), "--out", p(&e2)]);
    for f in ["report.json", "table.csv", "curves.csv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(e1.join("table.csv")).unwrap();
    for m in ["opic-ood", "opic-id", "linear-regression", "group-average", "retest"] {
        assert!(table.lines().next().unwrap().contains(m), "{m} missing from {table}");
    }
    let text = ok(&["report", "--data", p(&e1)]);
    assert!(text.contains("ood-new-group"));

    // the same predictions twice is ambiguous
    let o = opic(&["eval", "--data", p(&data), "--predictions", p(&a), "--predictions", p(&a), "--out", p(&e1)]);
    assert_eq!(o.status.code(), Some(2));
}
