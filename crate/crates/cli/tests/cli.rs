use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctax"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ctax(args);
    assert!(
        out.status.success(),
        "ctax {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "suite": {"families": ["tool_call_argument", "boolean_logic"], "count": 25, "seed": 11},
  "modes": ["prompt_json", "answer_only_schema", "final_only_regex"],
  "backends": [
    {"label": "faulty", "kind": "corruptor", "model_id": "toy",
     "fault": {"p_invalid_json": 0.2, "p_wrong_field": 0.3, "seed": 4}}
  ],
  "bootstrap": {"resamples": 300, "seed": 1},
  "output_dir": "ignored"
}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_run_derive_score_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let config = write_config(dir.path());

    ok(&["gen", "--out", &d("tasks.jsonl"), "--seed", "3", "--count", "4", "--family", "boolean_logic"]);
    assert_eq!(fs::read_to_string(d("tasks.jsonl")).unwrap().lines().count(), 4);

    let records = ok(&["run", "--config", &config, "--out", &d("run")]);
    assert!(records.trim().ends_with("records.jsonl"));
    // without --resume a second run refuses to touch existing records
    assert!(!ctax(&["run", "--config", &config, "--out", &d("run")]).status.success());
    ok(&["run", "--config", &config, "--out", &d("run"), "--resume"]);

    // schema- and regex-mode records are not a valid packaging source
    let refused = ctax(&[
        "derive-delayed",
        "--records",
        &d("run/records.jsonl"),
        "--tasks",
        &d("run/tasks.jsonl"),
        "--out",
        &d("derived.jsonl"),
    ]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("prompt_json or freeform"));
    assert!(!dir.path().join("derived.jsonl").exists());

    ok(&["score", "--records", &d("run/records.jsonl"), "--out", &d("scored"), "--config", &config]);
    ok(&["report", "--summary", &d("scored/summary.json"), "--out", &d("scored/report.md")]);
    let md = fs::read_to_string(d("scored/report.md")).unwrap();
    assert!(md.contains("## Constraint tax"));
    assert!(md.contains("Wrong duration"));
}

#[test]
fn derive_from_prompt_json_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let cfg = d("config.json");
    fs::write(
        &cfg,
        r#"{"suite": {"families": ["tool_call_argument"], "count": 30},
            "modes": ["prompt_json"],
            "backends": [{"label": "o", "kind": "oracle", "model_id": "o"}],
            "output_dir": "x"}"#,
    )
    .unwrap();
    ok(&["run", "--config", &cfg, "--out", &d("run")]);
    ok(&[
        "derive-delayed",
        "--records",
        &d("run/records.jsonl"),
        "--tasks",
        &d("run/tasks.jsonl"),
        "--out",
        &d("derived.jsonl"),
    ]);
    ok(&[
        "score",
        "--records",
        &d("run/records.jsonl"),
        &d("derived.jsonl"),
        "--out",
        &d("scored"),
        "--bootstrap-resamples",
        "100",
    ]);
    let comparisons = fs::read_to_string(d("scored/comparisons.csv")).unwrap();
    assert_eq!(comparisons.lines().count(), 2, "{comparisons}");
    assert!(comparisons.lines().nth(1).unwrap().contains("delayed_constraint"));
}

#[test]
fn validate_reports_and_sets_exit_code() {
    let out = ctax(&["validate", "--mode", "answer_only_schema", "--family", "arithmetic_two_step", "--text", r#"{"answer":"12"}"#]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("valid"));

    let out = ctax(&[
        "validate",
        "--mode",
        "prompt_json",
        "--family",
        "arithmetic_two_step",
        "--strict-extraction",
        "--text",
        "Sure: {\"answer\":\"12\"}",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = ctax(&[
        "validate",
        "--mode",
        "answer_only_schema",
        "--family",
        "tool_call_argument",
        "--text",
        r#"{"tool":"create_calendar_event","arguments":{"title":"x"}}"#,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("required"));

    let out = ctax(&["validate", "--mode", "no_such_mode", "--family", "boolean_logic", "--text", "x"]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"suite": {"families": [], "count": 3}, "modes": ["freeform"],
            "backends": [{"label": "o", "kind": "oracle", "model_id": "o"}], "output_dir": "x"}"#,
    )
    .unwrap();
    let out = ctax(&["run", "--config", &cfg.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("families"));
}
