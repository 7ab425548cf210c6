use std::path::Path;
use std::process::{Command, Output};

fn stopgate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopgate"))
        .args(args)
        .current_dir(dir)
        .env_remove("STOPGATE_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn synth_writes_stamped_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let o = stopgate(dir.path(), &["synth", "--n", "5", "--out", "t.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("{\"_meta\":"));
    assert!(lines[0].contains("config_hash"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stopgate(dir.path(), &["synth", "--n", "0", "--out", "t.jsonl"])), 2);
    assert_eq!(code(&stopgate(dir.path(), &["synth", "--out", "t.jsonl"])), 2);
    assert_eq!(code(&stopgate(dir.path(), &["frobnicate"])), 2);

    let cfg = write_config(dir.path(), r#"{"p_low": 0.5, "p_high": 0.5}"#);
    let o = stopgate(dir.path(), &["--config", &cfg, "repro", "--out", "r"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let cfg = write_config(dir.path(), r#"{"no_such_key": 1}"#);
    assert_eq!(code(&stopgate(dir.path(), &["--config", &cfg, "synth", "--n", "2", "--out", "t.jsonl"])), 2);
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let o = stopgate(dir.path(), &["synth", "--n", "2", "--out", "blocker/t.jsonl"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn malformed_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stopgate(dir.path(), &["synth", "--n", "8", "--out", "t.jsonl"])), 0);
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[6] = "{\"problem_id\": ".into();
    std::fs::write(dir.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let o = stopgate(dir.path(), &["build", "--trajectories", "bad.jsonl", "--out", "m.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn build_without_breakpoints_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stopgate(dir.path(), &["synth", "--n", "10", "--out", "t.jsonl"])), 0);
    let o = stopgate(
        dir.path(),
        &["--jump-threshold", "0.9", "build", "--trajectories", "t.jsonl", "--out", "m.jsonl"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("no terminate examples"), "{}", stderr(&o));
}

#[test]
fn synth_build_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = stopgate(dir.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["synth", "--n", "60", "--out", "t.jsonl"]);
    run(&["build", "--trajectories", "t.jsonl", "--out", "m.jsonl"]);
    let m = std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(m.lines().next().unwrap()).unwrap();
    let n = header["header"]["n_examples"].as_f64().unwrap();
    let terminate = header["header"]["counts"]["original_terminate"].as_f64().unwrap();
    assert!((terminate / n - 0.2).abs() <= 1.0 / n, "{terminate} / {n}");

    run(&["train", "--manifest", "m.jsonl", "--out", "p.json"]);
    run(&["eval", "--policy", "fixed:5", "--trajectories", "t.jsonl", "--out", "fixed.json"]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fixed.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["mean_stop_index"], 5.0);
    run(&["eval", "--policy", "oracle", "--trajectories", "t.jsonl", "--out", "oracle.json"]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["otr"], 1.0);
    run(&["eval", "--policy", "logistic:p.json", "--trajectories", "t.jsonl", "--out", "lr.json"]);

    let o = stopgate(dir.path(), &["eval", "--policy", "nonsense", "--trajectories", "t.jsonl", "--out", "x.json"]);
    assert_eq!(code(&o), 2);
    let o = stopgate(dir.path(), &["eval", "--policy", "logistic:missing.json", "--trajectories", "t.jsonl", "--out", "x.json"]);
    assert_eq!(code(&o), 1);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repro_is_byte_identical_and_reports_ordering_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_seeds": 1}"#);
    for out in ["a", "b"] {
        let o = stopgate(dir.path(), &["--config", &cfg, "--seed", "7", "repro", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = tree(&dir.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&dir.path().join("b")));

    // Without a key signal neither policy can find the breakpoint.
    let cfg = write_config(dir.path(), r#"{"n_train": 80, "n_eval": 40, "n_seeds": 1, "key_offset": 0.0}"#);
    let o = stopgate(dir.path(), &["--config", &cfg, "repro", "--out", "c"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("OTR gap"), "{}", stderr(&o));
}
