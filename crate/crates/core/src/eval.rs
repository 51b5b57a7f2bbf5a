//! Multiple-choice evaluation harness.
//!
//! Items run through a [`PipelineMode`] (base, +CoT, +CoT+RAG), answers are
//! parsed from model text and scored per task. Unparseable replies count as
//! wrong and are tallied separately. Per-item outcomes stream to an optional
//! JSON-lines progress file so an aborted run can resume.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{select_media, Backend, BackendError, ModelRequest, FRAMES_PER_CLIP, FRAME_RESOLUTION};
use crate::prompting::{assemble_prompt_with, extract_answer, PromptError, PromptTemplate, MAX_OPTIONS};
use crate::retrieval::{RetrievalError, Retriever};
use crate::vector_index::{RetrievalResult, DEFAULT_TOP_K};

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("item {item_id:?}: {reason}")]
    InvalidItem { item_id: String, reason: String },
    #[error("duplicate item_id {0:?}")]
    DuplicateItem(String),
    #[error("mode {0} needs a retriever")]
    MissingRetriever(ModeName),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("item {item_id:?}: {source}")]
    Backend {
        item_id: String,
        #[source]
        source: BackendError,
    },
    #[error("item {item_id:?}: {source}")]
    Retrieval {
        item_id: String,
        #[source]
        source: RetrievalError,
    },
    #[error("item {item_id:?}: {source}")]
    Prompt {
        item_id: String,
        #[source]
        source: PromptError,
    },
    #[error("dataset {path}, line {line}: {message}")]
    DatasetLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("progress file {path}: {message}")]
    Progress { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Question categories across the video-QA and traffic-sign benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Basic,
    Attribution,
    Introspection,
    Counterfactual,
    Forecasting,
    Reverse,
    SignRegulatory,
    SignWarning,
    SignGuide,
    SignTemporaryControl,
    Other,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::Basic,
        Task::Attribution,
        Task::Introspection,
        Task::Counterfactual,
        Task::Forecasting,
        Task::Reverse,
        Task::SignRegulatory,
        Task::SignWarning,
        Task::SignGuide,
        Task::SignTemporaryControl,
        Task::Other,
    ];

    /// Column heading used in markdown tables.
    pub fn label(self) -> &'static str {
        match self {
            Task::Basic => "Basic",
            Task::Attribution => "Attribution",
            Task::Introspection => "Introspection",
            Task::Counterfactual => "Counterfactual",
            Task::Forecasting => "Forecasting",
            Task::Reverse => "Reverse",
            Task::SignRegulatory => "Regulatory",
            Task::SignWarning => "Warning",
            Task::SignGuide => "Guide",
            Task::SignTemporaryControl => "Temporary Control",
            Task::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqItem {
    pub item_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub media: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_source_frames: Option<usize>,
}

impl McqItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let fail = |reason: String| EvalError::InvalidItem {
            item_id: self.item_id.clone(),
            reason,
        };
        if self.item_id.is_empty() {
            return Err(fail("item_id is empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(fail("question is empty".into()));
        }
        if !(2..=MAX_OPTIONS).contains(&self.options.len()) {
            return Err(fail(format!(
                "needs 2..={MAX_OPTIONS} options, has {}",
                self.options.len()
            )));
        }
        if self.answer_index >= self.options.len() {
            return Err(fail(format!(
                "answer_index {} out of range for {} options",
                self.answer_index,
                self.options.len()
            )));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if o.trim().is_empty() {
                return Err(fail("empty option".into()));
            }
            if !seen.insert(o.as_str()) {
                return Err(fail(format!("duplicate option {o:?}")));
            }
        }
        if self.n_source_frames == Some(0) {
            return Err(fail("n_source_frames must be positive".into()));
        }
        Ok(())
    }
}

/// Checks every item and id uniqueness.
pub fn validate_dataset(items: &[McqItem]) -> Result<(), EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut ids = HashSet::new();
    for item in items {
        item.validate()?;
        if !ids.insert(item.item_id.as_str()) {
            return Err(EvalError::DuplicateItem(item.item_id.clone()));
        }
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<McqItem>, EvalError> {
    let path = path.as_ref();
    let io_err = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let item: McqItem = serde_json::from_str(&line).map_err(|e| EvalError::DatasetLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn save_dataset(items: &[McqItem], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io_err = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("item serializes")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeName {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "cot")]
    WithCot,
    #[serde(rename = "cot_rag")]
    WithCotAndRag,
}

impl ModeName {
    pub const LADDER: [ModeName; 3] = [ModeName::Base, ModeName::WithCot, ModeName::WithCotAndRag];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeName::Base => "base",
            ModeName::WithCot => "cot",
            ModeName::WithCotAndRag => "cot_rag",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            ModeName::Base => "Base",
            ModeName::WithCot => "+ CoT",
            ModeName::WithCotAndRag => "+ RAG",
        }
    }
}

impl fmt::Display for ModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModeName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModeName::LADDER
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected base, cot or cot_rag)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineMode {
    pub name: ModeName,
    pub cot: bool,
    pub rag: bool,
    pub k: usize,
}

impl PipelineMode {
    pub fn new(name: ModeName, k: usize) -> Self {
        let (cot, rag) = match name {
            ModeName::Base => (false, false),
            ModeName::WithCot => (true, false),
            ModeName::WithCotAndRag => (true, true),
        };
        PipelineMode { name, cot, rag, k }
    }

    pub fn base() -> Self {
        Self::new(ModeName::Base, DEFAULT_TOP_K)
    }

    pub fn with_cot() -> Self {
        Self::new(ModeName::WithCot, DEFAULT_TOP_K)
    }

    pub fn with_cot_and_rag(k: usize) -> Self {
        Self::new(ModeName::WithCotAndRag, k)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if *self != Self::new(self.name, self.k) {
            return Err(EvalError::InvalidMode(format!(
                "{} requires cot={} rag={}",
                self.name,
                Self::new(self.name, self.k).cot,
                Self::new(self.name, self.k).rag
            )));
        }
        if self.k == 0 {
            return Err(EvalError::InvalidMode("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

impl TaskScore {
    pub fn from_counts(correct: u64, total: u64) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        TaskScore {
            correct,
            total,
            accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub embedding_dim: Option<usize>,
    pub k: usize,
    pub backend_id: String,
    pub seed: u64,
    pub frames_per_clip: usize,
    pub frame_resolution: [u32; 2],
    /// Fully resolved run configuration, when the caller supplies one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ModeName,
    pub per_task: BTreeMap<Task, TaskScore>,
    pub overall: TaskScore,
    pub unparseable_count: u64,
    pub config_snapshot: ConfigSnapshot,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// One progress-file line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub choice_index: Option<usize>,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Items evaluated in parallel.
    pub concurrency: usize,
    pub progress_path: Option<PathBuf>,
    /// Keep the progress file after a successful run.
    pub keep_progress: bool,
    pub template: PromptTemplate,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub run_config: Option<serde_json::Value>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            concurrency: DEFAULT_CONCURRENCY,
            progress_path: None,
            keep_progress: false,
            template: PromptTemplate::default(),
            seed: 0,
            temperature: 0.0,
            max_tokens: crate::backend::DEFAULT_MAX_TOKENS,
            run_config: None,
        }
    }
}

/// Progress file for one mode of an ablation, derived from a base path.
pub fn progress_path_for(base: &Path, mode: ModeName) -> PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{}", mode.as_str()));
    base.with_file_name(name)
}

fn read_progress(path: &Path) -> Result<HashMap<String, ItemOutcome>, EvalError> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let io_err = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: ItemOutcome = serde_json::from_str(&line).map_err(|e| EvalError::Progress {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        done.insert(outcome.item_id.clone(), outcome);
    }
    Ok(done)
}

struct Pipeline<'a> {
    mode: PipelineMode,
    retriever: Option<&'a Retriever>,
    backend: &'a dyn Backend,
    opts: &'a EvalOptions,
}

impl Pipeline<'_> {
    fn run_item(&self, item: &McqItem) -> Result<ItemOutcome, EvalError> {
        let retrieval = match (self.mode.rag, self.retriever) {
            (true, Some(r)) => r
                .retrieve(&item.question, self.mode.k)
                .map_err(|source| EvalError::Retrieval {
                    item_id: item.item_id.clone(),
                    source,
                })?,
            _ => RetrievalResult::default(),
        };
        let empty = HashMap::<u64, String>::new();
        let texts: &dyn crate::prompting::ChunkTexts = match self.retriever {
            Some(r) => r,
            None => &empty,
        };
        let bundle = assemble_prompt_with(
            &self.opts.template,
            &item.question,
            &item.options,
            &retrieval,
            texts,
            self.mode.cot,
            self.mode.rag,
        )
        .map_err(|source| EvalError::Prompt {
            item_id: item.item_id.clone(),
            source,
        })?;

        let backend_err = |source| EvalError::Backend {
            item_id: item.item_id.clone(),
            source,
        };
        let media = select_media(&item.media, item.n_source_frames).map_err(backend_err)?;
        let mut request = ModelRequest::new(bundle.rendered)
            .with_media(media)
            .with_item_id(item.item_id.clone());
        request.temperature = self.opts.temperature;
        request.max_tokens = self.opts.max_tokens;
        let response = crate::backend::query_model(&request, self.backend).map_err(backend_err)?;

        let choice = extract_answer(&response.text, &item.options)
            .ok()
            .map(|a| a.choice_index);
        Ok(ItemOutcome {
            item_id: item.item_id.clone(),
            choice_index: choice,
            correct: choice == Some(item.answer_index),
        })
    }
}

/// Evaluates `dataset` under `mode`.
///
/// The dataset is validated before any backend call. A backend failure aborts
/// the run; outcomes finished so far remain in the progress file.
pub fn run_eval(
    dataset: &[McqItem],
    mode: PipelineMode,
    retriever: Option<&Retriever>,
    backend: &dyn Backend,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    validate_dataset(dataset)?;
    mode.validate()?;
    if mode.rag && retriever.is_none() {
        return Err(EvalError::MissingRetriever(mode.name));
    }

    let mut done = match &opts.progress_path {
        Some(p) => read_progress(p)?,
        None => HashMap::new(),
    };
    done.retain(|id, _| dataset.iter().any(|i| &i.item_id == id));
    let pending: Vec<&McqItem> = dataset.iter().filter(|i| !done.contains_key(&i.item_id)).collect();

    let progress = match &opts.progress_path {
        Some(p) => {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| EvalError::Io {
                    path: p.clone(),
                    source,
                })?;
            Some(Mutex::new(BufWriter::new(f)))
        }
        None => None,
    };

    let pipeline = Pipeline {
        mode,
        retriever,
        backend,
        opts,
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<EvalError>> = Mutex::new(None);
    let finished: Mutex<Vec<ItemOutcome>> = Mutex::new(Vec::with_capacity(pending.len()));
    let workers = opts.concurrency.max(1).min(pending.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(idx) else { break };
                match pipeline.run_item(item) {
                    Ok(outcome) => {
                        if let Some(w) = &progress {
                            let mut w = w.lock().unwrap();
                            let line = serde_json::to_string(&outcome).expect("outcome serializes");
                            let written = writeln!(w, "{line}").and_then(|_| w.flush());
                            if let Err(source) = written {
                                abort.store(true, Ordering::SeqCst);
                                let path = opts.progress_path.clone().unwrap_or_default();
                                first_error
                                    .lock()
                                    .unwrap()
                                    .get_or_insert(EvalError::Io { path, source });
                                break;
                            }
                        }
                        finished.lock().unwrap().push(outcome);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    for outcome in finished.into_inner().unwrap() {
        done.insert(outcome.item_id.clone(), outcome);
    }
    let report = aggregate(dataset, &done, mode, retriever, backend, opts);
    if let (Some(p), false) = (&opts.progress_path, opts.keep_progress) {
        drop(progress);
        let _ = fs::remove_file(p);
    }
    Ok(report)
}

fn aggregate(
    dataset: &[McqItem],
    outcomes: &HashMap<String, ItemOutcome>,
    mode: PipelineMode,
    retriever: Option<&Retriever>,
    backend: &dyn Backend,
    opts: &EvalOptions,
) -> EvalReport {
    let mut items: Vec<&McqItem> = dataset.iter().collect();
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let mut counts: BTreeMap<Task, (u64, u64)> = BTreeMap::new();
    let mut unparseable = 0;
    for item in items {
        let outcome = &outcomes[&item.item_id];
        let entry = counts.entry(item.task).or_default();
        entry.1 += 1;
        if outcome.correct {
            entry.0 += 1;
        }
        if outcome.choice_index.is_none() {
            unparseable += 1;
        }
    }
    let (correct, total) = counts.values().fold((0, 0), |(c, t), (ci, ti)| (c + ci, t + ti));
    EvalReport {
        mode: mode.name,
        per_task: counts
            .into_iter()
            .map(|(t, (c, n))| (t, TaskScore::from_counts(c, n)))
            .collect(),
        overall: TaskScore::from_counts(correct, total),
        unparseable_count: unparseable,
        config_snapshot: ConfigSnapshot {
            embedding_dim: retriever.map(|r| r.provider().dim),
            k: mode.k,
            backend_id: backend.id().to_string(),
            seed: opts.seed,
            frames_per_clip: FRAMES_PER_CLIP,
            frame_resolution: [FRAME_RESOLUTION.0, FRAME_RESOLUTION.1],
            run_config: opts.run_config.clone(),
        },
    }
}

/// Base, +CoT and +CoT+RAG runs over the same dataset and backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reports: Vec<EvalReport>,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        render_markdown(&self.reports)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_ablation(
    dataset: &[McqItem],
    retriever: &Retriever,
    backend: &dyn Backend,
    k: usize,
    opts: &EvalOptions,
) -> Result<AblationReport, EvalError> {
    validate_dataset(dataset)?;
    let mut reports = Vec::with_capacity(3);
    for name in ModeName::LADDER {
        let mut mode_opts = opts.clone();
        mode_opts.progress_path = opts.progress_path.as_deref().map(|p| progress_path_for(p, name));
        reports.push(run_eval(
            dataset,
            PipelineMode::new(name, k),
            Some(retriever),
            backend,
            &mode_opts,
        )?);
    }
    Ok(AblationReport { reports })
}

/// One row per report, one column per task present in any report, then `All`.
/// Cells are accuracy percentages; `--` marks a task a report never saw.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let tasks: Vec<Task> = Task::ALL
        .into_iter()
        .filter(|t| reports.iter().any(|r| r.per_task.contains_key(t)))
        .collect();
    let mut out = String::from("| Method |");
    for t in &tasks {
        out.push_str(&format!(" {} |", t.label()));
    }
    out.push_str(" All |\n|---|");
    out.push_str(&"---|".repeat(tasks.len() + 1));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.mode.label()));
        for t in &tasks {
            match r.per_task.get(t) {
                Some(s) => out.push_str(&format!(" {:.2} |", s.accuracy * 100.0)),
                None => out.push_str(" -- |"),
            }
        }
        out.push_str(&format!(" {:.2} |\n", r.overall.accuracy * 100.0));
    }
    out
}
