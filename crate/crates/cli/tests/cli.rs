use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use crisis_core::Report;
use crisis_service::pipeline::{CorpusRecord, EnrichmentRecord, EvalRecord, SampleRecord, TopicRecord};
use serde_json::Value;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/camp_fire/config.toml")
}

fn crisis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crisis")).args(args).output().expect("spawn crisis")
}

fn read<T: serde::de::DeserializeOwned>(path: &Value) -> T {
    let path = path.as_str().expect("artifact path");
    serde_json::from_slice(&std::fs::read(path).expect("artifact exists")).expect("artifact re-parses")
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("stderr is one JSON line")
}

#[test]
fn dry_run_both_modes_end_to_end() {
    let store = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let start = Instant::now();
    let out = crisis(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dry-run",
        "--store-root",
        store.path().to_str().unwrap(),
        "--mode",
        "both",
    ]);
    assert!(start.elapsed() < Duration::from_secs(60));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();

    let corpus: CorpusRecord = read(&summary["corpus"]);
    assert_eq!(corpus.corpus.len(), 200);
    assert_eq!(corpus.dropped, 3);
    let enrichment: EnrichmentRecord = read(&summary["enrichment"]);
    assert_eq!(enrichment.posts.len(), 200);
    let _topics: TopicRecord = read(&summary["topics"]);
    let sample: SampleRecord = read(&summary["sample"]);
    assert_eq!(sample.sample.len(), 50);
    let basic: Report = read(&summary["reports"]["basic"]);
    let advanced: Report = read(&summary["reports"]["advanced"]);
    assert_ne!(basic.input_manifest, advanced.input_manifest);
    assert!(!basic.body.is_empty() && !advanced.body.is_empty());
    let eval: EvalRecord = read(&summary["eval"]);
    assert_eq!(eval.basic_report_id, basic.id);
    assert!(eval.table.row("coverage").is_some());
    assert!(Path::new(summary["eval_table"].as_str().unwrap()).is_file());
}

#[test]
fn basic_mode_skips_sampling() {
    let store = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let out = crisis(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dry-run",
        "--store-root",
        store.path().to_str().unwrap(),
        "--mode",
        "basic",
        "--word-limit",
        "200",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.get("sample").is_none());
    assert!(summary.get("eval").is_none());
    let basic: Report = read(&summary["reports"]["basic"]);
    assert_eq!(basic.request.word_limit, 200);
}

#[test]
fn missing_config_exits_two_with_json_error() {
    let out = crisis(&["run", "--config", "/nonexistent/crisis.toml", "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["code"], "config");
    assert!(err["message"].is_string() && err["detail"].is_string());
}

#[test]
fn bad_flags_exit_two() {
    let config = fixture_config();
    let out = crisis(&["run", "--config", config.to_str().unwrap(), "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["code"], "usage");
}

#[test]
fn city_report_without_city_fails_cleanly() {
    let store = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let out = crisis(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dry-run",
        "--store-root",
        store.path().to_str().unwrap(),
        "--mode",
        "basic",
        "--report-kind",
        "city_subevents",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error(&out);
    assert!(err["code"].is_string());
}
