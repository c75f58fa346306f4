use std::path::Path;
use std::process::{Command, Output};

fn armot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_armot")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(code(&armot(&["gradcheck", "--seeds", "1"])), 0);
    let faulty = armot(&["gradcheck", "--seeds", "1", "--inject-fault", "softmax"]);
    assert_eq!(code(&faulty), 1);
    assert!(String::from_utf8_lossy(&faulty.stdout).contains("FAIL"));
    assert_eq!(code(&armot(&["gradcheck", "--inject-fault", "bogus"])), 2);
    assert_eq!(code(&armot(&["gradcheck", "--inject-fault", "leaf"])), 2);
}

#[test]
fn spectra_test_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("spectra.json");
    assert_eq!(code(&armot(&["spectra-test", "--out", p(&report)])), 0);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["checks"].as_array().unwrap().len(), 22);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"seed": 4, "steps": 40, "scene": {"n_objects": 5, "n_frames": 6}}"#).unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&armot(&["train-toy", p(&config), "--out", p(&out)])), 0);
    for f in ["params.json", "loss.csv", "train_report.json", "scene.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 41);
    let ev = armot(&["eval", p(&out)]);
    assert_eq!(code(&ev), 0, "{}", String::from_utf8_lossy(&ev.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["hota"].as_f64().is_some());
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"lr": -1}"#).unwrap();
    assert_eq!(code(&armot(&["train-toy", p(&bad), "--out", p(&dir.path().join("o"))])), 2);
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(code(&armot(&["train-toy", p(&bad), "--out", p(&dir.path().join("o"))])), 2);
    assert_eq!(code(&armot(&["eval", p(&dir.path().join("nowhere"))])), 2);
    let broken = dir.path().join("broken").join("expr");
    std::fs::create_dir_all(&broken).unwrap();
    std::fs::write(broken.join("gt.txt"), "1,1,0,0,ten,10,1\n").unwrap();
    let o = armot(&["eval", p(&dir.path().join("broken"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gt.txt:1"));
    assert_eq!(code(&armot(&["simulate", "--objects", "0", "--out", p(&dir.path().join("s"))])), 2);
    assert_eq!(code(&armot(&["no-such-command"])), 2);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&armot(&["simulate", "--seed", "9", "--expressions", "4", "--out", p(d)])), 0);
    }
    let read = |d: &Path| std::fs::read(d.join("scene.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let other = dir.path().join("c");
    assert_eq!(code(&armot(&["simulate", "--seed", "10", "--out", p(&other)])), 0);
    assert_ne!(read(&a), read(&other));
}
