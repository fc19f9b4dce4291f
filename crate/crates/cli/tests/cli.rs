use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflectool"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn malformed_suite_exits_2_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let good = r#"{"id":"a","instruction":"1+1?","gold":"2"}"#;
    fs::write(tmp.path().join("suite.jsonl"), format!("{good}\n{{not json\n")).unwrap();
    fs::write(tmp.path().join("script.json"), "[]").unwrap();
    let out = run(tmp.path(), &["infer", "--suite", "suite.jsonl", "--out", "o", "--backend", "scripted:script.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_task_script_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("suite.jsonl"), r#"{"id":"a","instruction":"1+1?","gold":"2"}"#).unwrap();
    fs::write(tmp.path().join("script.json"), r#"{"other":[]}"#).unwrap();
    let out = run(tmp.path(), &["infer", "--suite", "suite.jsonl", "--out", "o", "--backend", "scripted:script.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_backend_exits_3() {
    let out = run(&fixtures(), &["infer", "--suite", "suite.jsonl", "--out", "/nonexistent/x", "--backend", "carrier-pigeon:x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn report_recomputes_metrics_from_records() {
    let tmp = tempfile::tempdir().unwrap();
    let inf = tmp.path().join("inf");
    let out = run(
        &fixtures(),
        &["infer", "--suite", "suite.jsonl", "--out", inf.to_str().unwrap(), "--backend", "scripted:infer_script.json", "--corpus", "corpus.jsonl"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = tmp.path().join("r.csv");
    let records = inf.join("records.jsonl");
    let out = run(
        tmp.path(),
        &["report", "--records", records.to_str().unwrap(), "--label", "base", "--out", csv.to_str().unwrap(), "--format", "csv"],
    );
    assert!(out.status.success());
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,tasks,accuracy,step_error_rate,task_error_rate,mean_steps,runtime_seconds_per_task,policy_calls,verifier_calls,steps"
    );
    assert!(lines.next().unwrap().starts_with("base,12,"));
}

#[test]
fn checkpoint_sweep_reads_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let opt = tmp.path().join("opt");
    let opt_s = opt.to_str().unwrap();
    let out = run(
        &fixtures(),
        &["optimize", "--suite", "suite.jsonl", "--out", opt_s, "--checkpoint-every", "6", "--backend", "scripted:optimize_script.json", "--corpus", "corpus.jsonl"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(opt.join("reports.jsonl")).unwrap().lines().count(), 12);
    let csv = tmp.path().join("sweep.csv");
    let out = run(
        &fixtures(),
        &[
            "sweep-opt", "--suite", "suite.jsonl", "--run-dir", opt_s, "--verifier", "select", "--n", "2",
            "--out", csv.to_str().unwrap(), "--backend", "scripted:infer_script.json", "--corpus", "corpus.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels: Vec<String> = fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(labels, ["checkpoint-0", "checkpoint-6", "checkpoint-12"]);
}
