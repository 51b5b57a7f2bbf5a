use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use traffic_rag::backend::{Backend, BackendError, ModelRequest, ModelResponse, ScriptedMock, UniformRandomMock};
use traffic_rag::embedding::{Embedder, HashEmbedder};
use traffic_rag::eval::{
    load_dataset, progress_path_for, render_markdown, run_ablation, run_eval, save_dataset, EvalError, EvalOptions,
    EvalReport, McqItem, ModeName, PipelineMode, Task,
};
use traffic_rag::fixtures::{balanced_mcq_dataset, planted_fact_fixture};
use traffic_rag::prompting::letter_for;
use traffic_rag::retrieval::Retriever;

fn item(id: &str, task: Task, answer: usize) -> McqItem {
    McqItem {
        item_id: id.into(),
        question: format!("Question {id}?"),
        options: vec!["left".into(), "right".into(), "straight".into(), "stop".into()],
        answer_index: answer,
        task,
        media: Vec::new(),
        n_source_frames: None,
    }
}

fn answer_all(items: &[McqItem]) -> ScriptedMock {
    ScriptedMock::new(
        items
            .iter()
            .map(|i| {
                (
                    i.item_id.clone(),
                    format!("Answer: {}", letter_for(i.answer_index).unwrap()),
                )
            })
            .collect(),
    )
}

/// Counts calls and fails every call after the first `ok_calls`.
struct Flaky {
    inner: ScriptedMock,
    ok_calls: usize,
    calls: AtomicUsize,
}

impl Backend for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }

    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok_calls {
            return Err(BackendError::Unavailable {
                attempts: 3,
                last: "down".into(),
            });
        }
        self.inner.query(request)
    }
}

fn opts(concurrency: usize) -> EvalOptions {
    EvalOptions {
        concurrency,
        ..EvalOptions::default()
    }
}

#[test]
fn perfect_backend_scores_one() {
    let items: Vec<McqItem> = (0..4).map(|i| item(&format!("p{i}"), Task::Basic, i)).collect();
    let r = run_eval(&items, PipelineMode::base(), None, &answer_all(&items), &opts(2)).unwrap();
    assert_eq!(r.overall.accuracy, 1.0);
    assert_eq!((r.overall.correct, r.overall.total, r.unparseable_count), (4, 4, 0));
    assert_eq!(r.config_snapshot.backend_id, "mock:scripted");
    assert_eq!(r.config_snapshot.frames_per_clip, 8);
    assert_eq!(r.config_snapshot.frame_resolution, [640, 480]);
}

#[test]
fn one_correct_task_out_of_six() {
    let tasks = [
        Task::Basic,
        Task::Attribution,
        Task::Introspection,
        Task::Counterfactual,
        Task::Forecasting,
        Task::Reverse,
    ];
    let items: Vec<McqItem> = tasks
        .iter()
        .enumerate()
        .map(|(i, &t)| item(&format!("t{i}"), t, 1))
        .collect();
    let mock =
        ScriptedMock::new(HashMap::from([("t0".to_string(), "Answer: B".to_string())])).with_default("Answer: A");
    let r = run_eval(&items, PipelineMode::with_cot(), None, &mock, &opts(3)).unwrap();
    assert_eq!(r.per_task[&Task::Basic].accuracy, 1.0);
    for t in &tasks[1..] {
        assert_eq!(r.per_task[t].accuracy, 0.0);
    }
    assert_eq!((r.overall.correct, r.overall.total), (1, 6));
    assert_eq!(r.overall.accuracy, 1.0 / 6.0);
}

#[test]
fn uniform_backend_converges_to_chance() {
    for n in [2usize, 4] {
        let items = balanced_mcq_dataset(10_000, n, 5);
        let mock = UniformRandomMock::new(7, n).unwrap();
        let r = run_eval(&items, PipelineMode::base(), None, &mock, &opts(8)).unwrap();
        let chance = 1.0 / n as f64;
        assert!(
            (r.overall.accuracy - chance).abs() <= 0.02,
            "n={n}: {}",
            r.overall.accuracy
        );
        assert_eq!(r.unparseable_count, 0);
    }
}

#[test]
fn unparseable_replies_count_as_wrong() {
    let items: Vec<McqItem> = (0..3).map(|i| item(&format!("u{i}"), Task::Other, 0)).collect();
    let mock = ScriptedMock::new(HashMap::from([("u0".to_string(), "Answer: A".to_string())])).with_default("no clue");
    let r = run_eval(&items, PipelineMode::base(), None, &mock, &opts(1)).unwrap();
    assert_eq!((r.overall.correct, r.unparseable_count), (1, 2));
}

#[test]
fn dataset_is_validated_before_any_call() {
    let mut items = vec![item("a", Task::Basic, 0), item("b", Task::Basic, 0)];
    items[1].options[2] = String::new();
    let backend = Flaky {
        inner: answer_all(&items),
        ok_calls: usize::MAX,
        calls: AtomicUsize::new(0),
    };
    assert!(matches!(
        run_eval(&items, PipelineMode::base(), None, &backend, &opts(1)),
        Err(EvalError::InvalidItem { .. })
    ));
    items[1] = item("a", Task::Basic, 0);
    assert!(matches!(
        run_eval(&items, PipelineMode::base(), None, &backend, &opts(1)),
        Err(EvalError::DuplicateItem(_))
    ));
    assert!(matches!(
        run_eval(&[], PipelineMode::base(), None, &backend, &opts(1)),
        Err(EvalError::EmptyDataset)
    ));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    let rag = run_eval(
        &[item("z", Task::Basic, 0)],
        PipelineMode::with_cot_and_rag(5),
        None,
        &backend,
        &opts(1),
    );
    assert!(matches!(rag, Err(EvalError::MissingRetriever(ModeName::WithCotAndRag))));
}

#[test]
fn aborted_run_resumes_from_progress() {
    let items: Vec<McqItem> = (0..10)
        .map(|i| item(&format!("r{i:02}"), Task::Forecasting, i % 4))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let progress = dir.path().join("progress.jsonl");
    let options = EvalOptions {
        concurrency: 1,
        progress_path: Some(progress.clone()),
        ..EvalOptions::default()
    };

    let flaky = Flaky {
        inner: answer_all(&items),
        ok_calls: 6,
        calls: AtomicUsize::new(0),
    };
    let err = run_eval(&items, PipelineMode::base(), None, &flaky, &options).unwrap_err();
    assert!(matches!(err, EvalError::Backend { .. }));
    let lines = std::fs::read_to_string(&progress).unwrap();
    assert_eq!(lines.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(
        first,
        serde_json::json!({"item_id": "r00", "choice_index": 0, "correct": true})
    );

    let resumed = Flaky {
        inner: answer_all(&items),
        ok_calls: usize::MAX,
        calls: AtomicUsize::new(0),
    };
    let r = run_eval(&items, PipelineMode::base(), None, &resumed, &options).unwrap();
    assert_eq!(resumed.calls.load(Ordering::SeqCst), 4);
    assert_eq!(r.overall.correct, 10);
    assert!(!progress.exists());
}

#[test]
fn progress_names_per_mode() {
    let p = progress_path_for(std::path::Path::new("/tmp/run/progress.jsonl"), ModeName::WithCot);
    assert_eq!(p, std::path::PathBuf::from("/tmp/run/progress.jsonl.cot"));
}

#[test]
fn report_json_round_trips_and_renders_identically() {
    let items: Vec<McqItem> = (0..8)
        .map(|i| item(&format!("j{i}"), Task::ALL[i % 3], i % 4))
        .collect();
    let mock = UniformRandomMock::new(3, 4).unwrap();
    let options = EvalOptions {
        run_config: Some(serde_json::json!({"k": 5, "note": "x"})),
        ..opts(2)
    };
    let r = run_eval(&items, PipelineMode::with_cot(), None, &mock, &options).unwrap();
    let back = EvalReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(render_markdown(&[back]), render_markdown(std::slice::from_ref(&r)));

    let md = render_markdown(&[r]);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "| Method | Basic | Attribution | Introspection | All |");
    assert!(lines[2].starts_with("| + CoT |"));
}

#[test]
fn missing_tasks_render_as_dashes() {
    let a = run_eval(
        &[item("a", Task::Basic, 0)],
        PipelineMode::base(),
        None,
        &ScriptedMock::new(HashMap::new()).with_default("Answer: A"),
        &opts(1),
    )
    .unwrap();
    let b = run_eval(
        &[item("b", Task::SignGuide, 0)],
        PipelineMode::with_cot(),
        None,
        &ScriptedMock::new(HashMap::new()).with_default("Answer: B"),
        &opts(1),
    )
    .unwrap();
    let md = render_markdown(&[a, b]);
    assert!(md.contains("| Base | 100.00 | -- | 100.00 |"), "{md}");
    assert!(md.contains("| + CoT | -- | 0.00 | 0.00 |"), "{md}");
}

fn planted_retriever(fx: &traffic_rag::fixtures::PlantedFactFixture, seed: u64) -> Retriever {
    let emb: Arc<dyn Embedder> = Arc::new(HashEmbedder::with_seed(seed, 256).unwrap());
    Retriever::build(fx.corpus.clone(), emb).unwrap()
}

#[test]
fn planted_fact_is_top_one_for_every_item() {
    let fx = planted_fact_fixture(40, 17);
    let r = planted_retriever(&fx, 17);
    for (q, fact) in fx.dataset.iter().zip(&fx.facts) {
        let expected = fx
            .corpus
            .chunks()
            .iter()
            .find(|c| c.text == fact.fact)
            .unwrap()
            .chunk_id;
        // brute force over every chunk
        let all = r.retrieve(&q.question, fx.corpus.len()).unwrap();
        assert_eq!(all.ranked[0].chunk_id, expected, "{}", q.question);
        assert!(all.ranked[0].score > all.ranked[1].score);
    }
}

#[test]
fn planted_fact_ablation_ladder() {
    let fx = planted_fact_fixture(40, 17);
    let r = planted_retriever(&fx, 17);
    let report = run_ablation(&fx.dataset, &r, &fx.knowledge_mock(), 5, &opts(4)).unwrap();
    let modes: Vec<ModeName> = report.reports.iter().map(|r| r.mode).collect();
    assert_eq!(modes, ModeName::LADDER.to_vec());
    let acc: Vec<f64> = report.reports.iter().map(|r| r.overall.accuracy).collect();
    assert_eq!(acc, vec![fx.fallback_accuracy(), fx.fallback_accuracy(), 1.0]);
    let md = report.to_markdown();
    let rows: Vec<&str> = md.lines().skip(2).collect();
    assert!(rows[0].starts_with("| Base |") && rows[1].starts_with("| + CoT |") && rows[2].starts_with("| + RAG |"));
    assert!(rows[2].ends_with("| 100.00 |"));
}

#[test]
fn mode_insensitive_backend_scores_equally() {
    let fx = planted_fact_fixture(12, 2);
    let r = planted_retriever(&fx, 2);
    let mock = ScriptedMock::new(HashMap::new()).with_default("Answer: B");
    let report = run_ablation(&fx.dataset, &r, &mock, 3, &opts(2)).unwrap();
    let acc: Vec<f64> = report.reports.iter().map(|r| r.overall.accuracy).collect();
    assert!(acc.iter().all(|&a| a == acc[0]), "{acc:?}");
}

#[test]
fn reports_are_deterministic_across_concurrency() {
    let items = balanced_mcq_dataset(500, 4, 9);
    let mock = UniformRandomMock::new(21, 4).unwrap();
    let one = run_eval(&items, PipelineMode::base(), None, &mock, &opts(1)).unwrap();
    let many = run_eval(&items, PipelineMode::base(), None, &mock, &opts(16)).unwrap();
    assert_eq!(one.to_json(), many.to_json());
}

#[test]
fn dataset_file_round_trip() {
    let items = balanced_mcq_dataset(20, 3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&items, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), items);
    std::fs::write(&path, "{\"item_id\":\"x\"}\n").unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(EvalError::DatasetLine { line: 1, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn counts_decompose(replies in prop::collection::vec((0usize..11, 0usize..4, prop_oneof![Just("A"), Just("B"), Just("C"), Just("D"), Just("?")]), 1..60)) {
        let items: Vec<McqItem> = replies.iter().enumerate().map(|(i, (t, a, _))| item(&format!("i{i:03}"), Task::ALL[*t], *a)).collect();
        let mock = ScriptedMock::new(replies.iter().enumerate().map(|(i, (_, _, l))| (format!("i{i:03}"), format!("Answer: {l}"))).collect());
        let r = run_eval(&items, PipelineMode::base(), None, &mock, &opts(4)).unwrap();
        let correct: u64 = r.per_task.values().map(|s| s.correct).sum();
        let total: u64 = r.per_task.values().map(|s| s.total).sum();
        prop_assert_eq!(correct, r.overall.correct);
        prop_assert_eq!(total, items.len() as u64);
        prop_assert_eq!(r.overall.accuracy, correct as f64 / total as f64);
        let expected_correct = replies.iter().filter(|(_, a, l)| letter_for(*a).unwrap().to_string() == *l).count() as u64;
        prop_assert_eq!(r.overall.correct, expected_correct);
        let unparseable = replies.iter().filter(|(_, _, l)| *l == "?").count() as u64;
        prop_assert_eq!(r.unparseable_count, unparseable);
    }
}
