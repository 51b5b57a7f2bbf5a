use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use traffic_rag::eval::AblationReport;
use traffic_rag::fixtures::{balanced_mcq_dataset, planted_fact_fixture};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_traffic-rag"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("TRAFFIC_RAG_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DOC: &str = "Vehicles must stop at a red signal. A flashing amber signal permits passing with caution.\n\n\
                   Pedestrians have priority on zebra crossings. Drivers must not stop inside a box junction.";

#[test]
fn ingest_and_index_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("signals.txt");
    std::fs::write(&doc, DOC).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let stdout = ok(&["ingest", s(&doc), "--out", s(&corpus)]);
    assert!(stdout.contains("wrote 2 chunks from 1 documents"), "{stdout}");

    let (a, b) = (dir.path().join("a.idx"), dir.path().join("b.idx"));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"corpus_path": {:?}}}"#, s(&corpus))).unwrap();
    ok(&["--config", s(&cfg), "build-index", "--out", s(&a)]);
    ok(&["--config", s(&cfg), "build-index", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.idx.provider.json")).unwrap(),
        std::fs::read(dir.path().join("b.idx.provider.json")).unwrap()
    );

    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"{"*": "The signal is red. Answer: B"}"#).unwrap();
    let backend = format!("mock:scripted:{}", s(&script));
    let cfg2 = dir.path().join("cfg2.json");
    std::fs::write(
        &cfg2,
        format!(
            r#"{{"corpus_path": {:?}, "index_path": {:?}, "k": 1}}"#,
            s(&corpus),
            s(&a)
        ),
    )
    .unwrap();
    let stdout = ok(&[
        "--config",
        s(&cfg2),
        "--backend",
        &backend,
        "ask",
        "What must vehicles do at a red signal?",
        "--option",
        "go",
        "--option",
        "stop",
    ]);
    assert!(stdout.contains("retrieved:"), "{stdout}");
    assert!(stdout.contains("red signal"), "{stdout}");
    assert!(stdout.contains("answer: B (stop)"), "{stdout}");

    let stdout = ok(&[
        "--mode",
        "base",
        "--backend",
        &backend,
        "ask",
        "Stop or go?",
        "--option",
        "go",
        "--option",
        "stop",
    ]);
    assert!(!stdout.contains("retrieved:"));
    assert!(stdout.contains("answer: B (stop)"));

    // Querying with a different embedding seed than the index was built with is refused.
    let out = run(&[
        "--config",
        s(&cfg2),
        "--seed",
        "9",
        "--backend",
        &backend,
        "ask",
        "q?",
        "--option",
        "x",
        "--option",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_report_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset.jsonl");
    traffic_rag::eval::save_dataset(&balanced_mcq_dataset(300, 4, 5), &dataset).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dataset_path": {:?}, "backend": "mock:uniform:4", "mode": "cot", "seed": 11, "concurrency": 8}}"#,
            s(&dataset)
        ),
    )
    .unwrap();
    let first = ok(&["--config", s(&cfg), "eval"]);
    let second = ok(&["--config", s(&cfg), "eval"]);
    assert_eq!(first, second);
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["mode"], "cot");
    assert_eq!(report["overall"]["total"], 300);
    assert_eq!(report["config_snapshot"]["run_config"]["seed"], 11);

    let out = dir.path().join("report.json");
    let table = ok(&["--config", s(&cfg), "eval", "--out", s(&out)]);
    assert!(table.contains("| + CoT |"), "{table}");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["overall"], report["overall"]);
}

#[test]
fn ablate_on_planted_facts_favours_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let fx = planted_fact_fixture(24, 2);
    let files = fx.write_files(dir.path()).unwrap();
    let index = dir.path().join("corpus.idx");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"corpus_path": {:?}, "index_path": {:?}, "dataset_path": {:?}, "backend": "mock:knowledge:{}", "k": 3}}"#,
            s(&files.corpus), s(&index), s(&files.dataset), s(&files.knowledge)
        ),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "build-index"]);
    let report: AblationReport = serde_json::from_str(&ok(&["--config", s(&cfg), "ablate"])).unwrap();
    let acc: Vec<f64> = report.reports.iter().map(|r| r.overall.accuracy).collect();
    assert_eq!(acc, vec![0.25, 0.25, 1.0]);
}

#[test]
fn selftest_exits_cleanly() {
    let stdout = ok(&["selftest"]);
    assert!(stdout.contains("checks passed"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn config_errors_are_one_json_line() {
    let out = run(&["--k", "0", "eval"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    let err: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "config");
    let violations = err["violations"].as_array().unwrap();
    assert!(violations.len() >= 3, "{violations:?}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"colour": "red"}"#).unwrap();
    let out = run(&["--config", s(&cfg), "selftest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    let out = run(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["--backend", "mock:uniform:4", "--mode", "base", "eval"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"dataset_path": {:?}}}"#, s(&missing))).unwrap();
    let out = run(&[
        "--config",
        s(&cfg),
        "--backend",
        "mock:uniform:4",
        "--mode",
        "base",
        "eval",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "dataset");
}
