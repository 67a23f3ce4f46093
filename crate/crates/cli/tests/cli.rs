use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn deskpilot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskpilot"))
        .args(args)
        .env_remove("AGENT_MODEL_ENDPOINT")
        .env_remove("AGENT_MODEL_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_succeeds_and_writes_memory_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mem = dir.path().join("mem");
    let report = dir.path().join("report.json");
    let out = deskpilot(&[
        "run",
        &fixture("tasks/thunderbird_remove_account.toml"),
        "--script",
        &fixture("scripts/thunderbird_remove_account.jsonl"),
        "--memory-dir",
        mem.to_str().unwrap(),
        "--trace-dir",
        dir.path().to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("thunderbird-remove-account: success"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["outcome"], "success");
    assert!(mem.join("narrative.jsonl").exists());

    let out = deskpilot(&[
        "memory",
        "inspect",
        "--dir",
        mem.to_str().unwrap(),
        "--store",
        "episodic",
        "--query",
        "Open Account Settings",
        "-k",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("2 results"), "{}", stdout(&out));
}

#[test]
fn failing_task_exits_one() {
    let out = deskpilot(&[
        "run",
        &fixture("tasks/thunderbird_remove_account.toml"),
        "--script",
        &fixture("scripts/never_terminating.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("step-limit"));
}

#[test]
fn exhausted_script_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = deskpilot(&[
        "run",
        &fixture("tasks/notes_save.toml"),
        "--script",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn suite_reports_success_rate() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("suite.json");
    let out = deskpilot(&[
        "suite",
        &fixture("tasks"),
        "--script",
        &fixture("scripts/suite.jsonl"),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("success rate: 100.0% (4/4)"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn explore_fills_memory() {
    let dir = tempfile::tempdir().unwrap();
    let out = deskpilot(&[
        "explore",
        &fixture("tasks/thunderbird_remove_account.toml"),
        "-n",
        "2",
        "--script",
        &fixture("scripts/exploration.jsonl"),
        "--memory-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("exploration: 2 tasks"));
}

#[test]
fn empty_store_inspects_to_zero_results() {
    let dir = tempfile::tempdir().unwrap();
    // Opening a memory directory creates both stores with headers only.
    let mem = dir.path().join("mem");
    let out = deskpilot(&[
        "run",
        &fixture("tasks/notes_save.toml"),
        "--script",
        &fixture("scripts/never_terminating.jsonl"),
        "--memory-dir",
        mem.to_str().unwrap(),
        "--no-narrative",
    ]);
    assert_ne!(out.status.code(), Some(2));
    let out = deskpilot(&[
        "memory",
        "inspect",
        "--dir",
        mem.to_str().unwrap(),
        "--store",
        "episodic",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "0 results");
}

#[test]
fn missing_store_and_bad_config_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = deskpilot(&["memory", "inspect", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "max_steps_total = 0\n").unwrap();
    let out = deskpilot(&[
        "--config",
        cfg.to_str().unwrap(),
        "run",
        &fixture("tasks/notes_save.toml"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = deskpilot(&["run", "/nonexistent/task.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_task_checks_each_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nid = \"x\"\n").unwrap();
    let good = fixture("tasks/files_archive.toml");
    let out = deskpilot(&["validate-task", &good]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ok "));
    let out = deskpilot(&["validate-task", &good, bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("invalid "));
}
