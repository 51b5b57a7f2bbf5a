//! The `traffic-rag` command line.
//!
//! Configuration is one JSON file (`--config`) overlaid by flags; flags win.
//! Every report embeds the resolved configuration, which is itself a valid
//! `--config` file. Failures print one JSON line to stderr and exit nonzero.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{
    Backend, KnowledgeAwareMock, ModelRequest, RemoteBackend, ScriptedMock, UniformRandomMock, DEFAULT_TIMEOUT,
};
use crate::corpus::{load_corpus, save_corpus, Category, CorpusBuilder, DEFAULT_CHUNK_CHARS, MIN_CHUNK_CHARS};
use crate::embedding::{embed_corpus, provider_from_config, EmbeddingProviderConfig, DEFAULT_DIM};
use crate::eval::{load_dataset, run_ablation, run_eval, EvalOptions, ModeName, PipelineMode, DEFAULT_CONCURRENCY};
use crate::kernels::selftest::run_selftest;
use crate::prompting::{assemble_prompt_with, extract_answer, letter_for, PromptTemplate};
use crate::retrieval::Retriever;
use crate::vector_index::{load_index, save_index, RetrievalResult, VectorDatabase, DEFAULT_TOP_K};

#[derive(Debug, Parser)]
#[command(
    name = "traffic-rag",
    version,
    about = "Knowledge-grounded traffic QA: ingest, index, ask, evaluate"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Chunks retrieved per question.
    #[arg(long = "k", global = true)]
    pub k: Option<usize>,
    /// base, cot or cot_rag.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path: the corpus for `ingest`, the index for `build-index`,
    /// the report for `eval` and `ablate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// URL, mock:scripted:<path>, mock:uniform:<n> or mock:knowledge:<path>.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk raw text documents into a corpus file.
    Ingest {
        /// Documents to ingest; the file stem becomes the source id.
        files: Vec<PathBuf>,
        /// Category applied to every document given here.
        #[arg(long, default_value = "regulation")]
        category: String,
        #[arg(long)]
        max_chunk_chars: Option<usize>,
    },
    /// Embed the corpus and write the vector index.
    BuildIndex,
    /// Answer one question.
    Ask {
        question: String,
        /// An answer option; repeat for each option in order.
        #[arg(long = "option")]
        options: Vec<String>,
    },
    /// Score a dataset under one mode.
    Eval,
    /// Score a dataset under Base, +CoT and +RAG.
    Ablate,
    /// Run the kernel invariant suite.
    Selftest,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub embedding: Option<EmbeddingProviderConfig>,
    pub backend: Option<String>,
    pub k: Option<usize>,
    pub mode: Option<ModeName>,
    pub seed: Option<u64>,
    pub report_out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub progress_path: Option<PathBuf>,
    pub template_path: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_chunk_chars: Option<usize>,
}

/// Configuration after defaults and flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub corpus_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub embedding: EmbeddingProviderConfig,
    pub backend: Option<String>,
    pub k: usize,
    pub mode: ModeName,
    pub seed: u64,
    pub report_out: Option<PathBuf>,
    pub concurrency: usize,
    pub progress_path: Option<PathBuf>,
    pub template_path: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_chunk_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Remote(String),
    Scripted(PathBuf),
    Uniform(usize),
    Knowledge(PathBuf),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(path) = s.strip_prefix("mock:scripted:") {
            return Ok(BackendSpec::Scripted(path.into()));
        }
        if let Some(path) = s.strip_prefix("mock:knowledge:") {
            return Ok(BackendSpec::Knowledge(path.into()));
        }
        if let Some(n) = s.strip_prefix("mock:uniform:") {
            return match n.parse::<usize>() {
                Ok(n) if (1..=8).contains(&n) => Ok(BackendSpec::Uniform(n)),
                _ => Err(format!(
                    "backend: mock:uniform needs an option count in 1..=8, got {n:?}"
                )),
            };
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Remote(s.to_string()));
        }
        Err(format!("backend: unrecognized spec {s:?}"))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(Vec<String>),
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    fn runtime(kind: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Runtime {
            kind,
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    /// The single-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        let v = match self {
            CliError::Usage(m) => json!({"error": "usage", "message": m}),
            CliError::Config(v) => json!({"error": "config", "message": v.join("; "), "violations": v}),
            CliError::Runtime { kind, message } => json!({"error": kind, "message": message}),
        };
        v.to_string()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Needs {
    Ingest,
    BuildIndex,
    Ask,
    Eval,
    Ablate,
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let raw =
        fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))?;
    serde_json::from_str(&raw).map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))
}

/// Merges file and flags, then checks everything the subcommand needs,
/// reporting all violations together.
fn resolve(cli: &Cli, file: RunConfig, needs: Option<Needs>) -> Result<ResolvedConfig, CliError> {
    let mut violations = Vec::new();
    let mode = match &cli.mode {
        Some(m) => m.parse::<ModeName>().unwrap_or_else(|_| {
            violations.push(format!("mode: expected base, cot or cot_rag, got {m:?}"));
            ModeName::WithCotAndRag
        }),
        None => file.mode.unwrap_or(ModeName::WithCotAndRag),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let mut cfg = ResolvedConfig {
        corpus_path: file.corpus_path,
        index_path: file.index_path,
        dataset_path: file.dataset_path,
        embedding: file
            .embedding
            .unwrap_or_else(|| EmbeddingProviderConfig::deterministic(seed, DEFAULT_DIM)),
        backend: cli.backend.clone().or(file.backend),
        k: cli.k.or(file.k).unwrap_or(DEFAULT_TOP_K),
        mode,
        seed,
        report_out: file.report_out,
        concurrency: file.concurrency.unwrap_or(DEFAULT_CONCURRENCY),
        progress_path: file.progress_path,
        template_path: file.template_path,
        timeout_secs: file.timeout_secs.unwrap_or(DEFAULT_TIMEOUT.as_secs()),
        max_chunk_chars: file.max_chunk_chars.unwrap_or(DEFAULT_CHUNK_CHARS),
    };
    if let Command::Ingest {
        max_chunk_chars: Some(m),
        ..
    } = &cli.command
    {
        cfg.max_chunk_chars = *m;
    }
    if let Some(out) = &cli.out {
        match needs {
            Some(Needs::Ingest) => cfg.corpus_path = Some(out.clone()),
            Some(Needs::BuildIndex) => cfg.index_path = Some(out.clone()),
            _ => cfg.report_out = Some(out.clone()),
        }
    }

    if cfg.k == 0 {
        violations.push("k: must be at least 1".into());
    }
    if cfg.concurrency == 0 {
        violations.push("concurrency: must be at least 1".into());
    }
    if cfg.timeout_secs == 0 {
        violations.push("timeout_secs: must be at least 1".into());
    }
    if cfg.max_chunk_chars < MIN_CHUNK_CHARS {
        violations.push(format!(
            "max_chunk_chars: must be at least {MIN_CHUNK_CHARS}, got {}",
            cfg.max_chunk_chars
        ));
    }
    violations.extend(
        cfg.embedding
            .violations()
            .into_iter()
            .map(|v| format!("embedding: {v}")),
    );
    if let Some(b) = &cfg.backend {
        if let Err(e) = b.parse::<BackendSpec>() {
            violations.push(e);
        }
    }

    let mut require = |present: bool, what: &str| {
        if !present {
            violations.push(format!("{what}: required for this command"));
        }
    };
    let rag = cfg.mode == ModeName::WithCotAndRag;
    match needs {
        Some(Needs::Ingest) => require(cfg.corpus_path.is_some(), "corpus_path (or --out)"),
        Some(Needs::BuildIndex) => {
            require(cfg.corpus_path.is_some(), "corpus_path");
            require(cfg.index_path.is_some(), "index_path (or --out)");
        }
        Some(Needs::Ask) | Some(Needs::Eval) | Some(Needs::Ablate) => {
            require(cfg.backend.is_some(), "backend");
            if needs != Some(Needs::Ask) {
                require(cfg.dataset_path.is_some(), "dataset_path");
            }
            if rag || needs == Some(Needs::Ablate) {
                require(cfg.corpus_path.is_some(), "corpus_path (rag mode)");
                require(cfg.index_path.is_some(), "index_path (rag mode)");
            }
        }
        None => {}
    }

    let written: Vec<(&str, &PathBuf)> = match needs {
        Some(Needs::Ingest) => cfg.corpus_path.iter().map(|p| ("corpus_path", p)).collect(),
        Some(Needs::BuildIndex) => cfg.index_path.iter().map(|p| ("index_path", p)).collect(),
        Some(Needs::Eval) | Some(Needs::Ablate) => cfg
            .report_out
            .iter()
            .map(|p| ("report_out", p))
            .chain(cfg.progress_path.iter().map(|p| ("progress_path", p)))
            .collect(),
        _ => Vec::new(),
    };
    let all_paths = [
        ("corpus_path", &cfg.corpus_path),
        ("index_path", &cfg.index_path),
        ("dataset_path", &cfg.dataset_path),
        ("report_out", &cfg.report_out),
        ("progress_path", &cfg.progress_path),
    ];
    for (name, path) in &written {
        for (other, p) in all_paths.iter().filter(|(o, _)| o != name) {
            if p.as_ref() == Some(*path) {
                violations.push(format!("{name}: must differ from {other} ({})", path.display()));
            }
        }
    }

    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(violations))
    }
}

/// Where `build-index` records the embedding provider next to an index.
pub fn provider_sidecar(index_path: &Path) -> PathBuf {
    let mut name = index_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provider.json");
    index_path.with_file_name(name)
}

fn make_backend(spec: &str, cfg: &ResolvedConfig) -> Result<Box<dyn Backend>, CliError> {
    let spec: BackendSpec = spec.parse().map_err(|e| CliError::Config(vec![e]))?;
    let backend_err = |e| CliError::runtime("backend", e);
    Ok(match spec {
        BackendSpec::Remote(url) => Box::new(
            RemoteBackend::connect(&url, Duration::from_secs(cfg.timeout_secs)).with_max_in_flight(cfg.concurrency),
        ),
        BackendSpec::Scripted(path) => Box::new(ScriptedMock::from_file(path).map_err(backend_err)?),
        BackendSpec::Uniform(n) => Box::new(UniformRandomMock::new(cfg.seed, n).map_err(backend_err)?),
        BackendSpec::Knowledge(path) => Box::new(KnowledgeAwareMock::from_file(path).map_err(backend_err)?),
    })
}

fn open_retriever(cfg: &ResolvedConfig) -> Result<Retriever, CliError> {
    let corpus_path = cfg.corpus_path.as_ref().expect("validated");
    let index_path = cfg.index_path.as_ref().expect("validated");
    let corpus = load_corpus(corpus_path).map_err(|e| CliError::runtime("corpus", e))?;
    let db = load_index(index_path).map_err(|e| CliError::runtime("index", e))?;
    let sidecar = provider_sidecar(index_path);
    let raw =
        fs::read_to_string(&sidecar).map_err(|e| CliError::runtime("index", format!("{}: {e}", sidecar.display())))?;
    let index_provider: EmbeddingProviderConfig =
        serde_json::from_str(&raw).map_err(|e| CliError::runtime("index", format!("{}: {e}", sidecar.display())))?;
    let embedder = provider_from_config(&cfg.embedding).map_err(|e| CliError::runtime("embedding", e))?;
    Retriever::from_index(corpus, db, Arc::from(embedder), &index_provider)
        .map_err(|e| CliError::runtime("retrieval", e))
}

fn template(cfg: &ResolvedConfig) -> Result<PromptTemplate, CliError> {
    match &cfg.template_path {
        Some(p) => PromptTemplate::from_file(p).map_err(|e| CliError::runtime("template", e)),
        None => Ok(PromptTemplate::default()),
    }
}

fn eval_options(cfg: &ResolvedConfig) -> Result<EvalOptions, CliError> {
    Ok(EvalOptions {
        concurrency: cfg.concurrency,
        progress_path: cfg.progress_path.clone(),
        template: template(cfg)?,
        seed: cfg.seed,
        run_config: Some(serde_json::to_value(cfg).expect("config serializes")),
        ..EvalOptions::default()
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

fn cmd_ingest(cfg: &ResolvedConfig, files: &[PathBuf], category: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let category: Category = category
        .parse()
        .map_err(|_| CliError::Config(vec![format!("category: unknown value {category:?}")]))?;
    if files.is_empty() {
        return Err(CliError::Config(
            vec!["files: at least one document is required".into()],
        ));
    }
    let mut builder = CorpusBuilder::new();
    for file in files {
        let raw = fs::read(file).map_err(|e| CliError::runtime("io", format!("{}: {e}", file.display())))?;
        let text =
            String::from_utf8(raw).map_err(|e| CliError::runtime("decode", format!("{}: {e}", file.display())))?;
        let source = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        builder
            .add_document(&text, &source, category, cfg.max_chunk_chars)
            .map_err(|e| CliError::runtime("corpus", e))?;
    }
    let corpus = builder.build().map_err(|e| CliError::runtime("corpus", e))?;
    let path = cfg.corpus_path.as_ref().expect("validated");
    save_corpus(&corpus, path).map_err(|e| CliError::runtime("corpus", e))?;
    let _ = writeln!(
        out,
        "wrote {} chunks from {} documents to {}",
        corpus.len(),
        corpus.doc_count(),
        path.display()
    );
    Ok(())
}

fn cmd_build_index(cfg: &ResolvedConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus =
        load_corpus(cfg.corpus_path.as_ref().expect("validated")).map_err(|e| CliError::runtime("corpus", e))?;
    let embedder = provider_from_config(&cfg.embedding).map_err(|e| CliError::runtime("embedding", e))?;
    let entries = embed_corpus(&corpus, embedder.as_ref()).map_err(|e| CliError::runtime("embedding", e))?;
    let db = VectorDatabase::from_entries(cfg.embedding.dim, entries).map_err(|e| CliError::runtime("index", e))?;
    let path = cfg.index_path.as_ref().expect("validated");
    save_index(&db, path).map_err(|e| CliError::runtime("index", e))?;
    let provider = serde_json::to_string_pretty(&cfg.embedding).expect("config serializes");
    write_file(&provider_sidecar(path), provider.as_bytes())?;
    let _ = writeln!(
        out,
        "indexed {} chunks (dim {}) into {}",
        db.len(),
        db.dim(),
        path.display()
    );
    Ok(())
}

fn cmd_ask(cfg: &ResolvedConfig, question: &str, options: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let mode = PipelineMode::new(cfg.mode, cfg.k);
    let retriever = if mode.rag { Some(open_retriever(cfg)?) } else { None };
    let retrieved = match &retriever {
        Some(r) => r
            .retrieve(question, cfg.k)
            .map_err(|e| CliError::runtime("retrieval", e))?,
        None => RetrievalResult::default(),
    };
    let empty = std::collections::HashMap::<u64, String>::new();
    let texts: &dyn crate::prompting::ChunkTexts = match &retriever {
        Some(r) => r,
        None => &empty,
    };
    let bundle = assemble_prompt_with(
        &template(cfg)?,
        question,
        options,
        &retrieved,
        texts,
        mode.cot,
        mode.rag,
    )
    .map_err(|e| CliError::runtime("prompt", e))?;
    let backend = make_backend(cfg.backend.as_deref().expect("validated"), cfg)?;
    let request = ModelRequest::new(bundle.rendered).with_item_id("ask");
    let response =
        crate::backend::query_model(&request, backend.as_ref()).map_err(|e| CliError::runtime("backend", e))?;

    if let Some(r) = &retriever {
        let _ = writeln!(out, "retrieved:");
        for hit in &retrieved.ranked {
            let chunk = r.corpus().get(hit.chunk_id).expect("index ids resolve");
            let _ = writeln!(
                out,
                "  {:.4}  #{} [{}] {}",
                hit.score, hit.chunk_id, chunk.source_doc, chunk.text
            );
        }
    }
    let _ = writeln!(out, "response: {}", response.text);
    match extract_answer(&response.text, options) {
        Ok(a) => {
            let letter = letter_for(a.choice_index).unwrap_or('?');
            let _ = writeln!(out, "answer: {letter} ({})", options[a.choice_index]);
        }
        Err(_) => {
            let _ = writeln!(out, "answer: none");
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &ResolvedConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset =
        load_dataset(cfg.dataset_path.as_ref().expect("validated")).map_err(|e| CliError::runtime("dataset", e))?;
    let mode = PipelineMode::new(cfg.mode, cfg.k);
    let retriever = if mode.rag { Some(open_retriever(cfg)?) } else { None };
    let backend = make_backend(cfg.backend.as_deref().expect("validated"), cfg)?;
    let report = run_eval(
        &dataset,
        mode,
        retriever.as_ref(),
        backend.as_ref(),
        &eval_options(cfg)?,
    )
    .map_err(|e| CliError::runtime("eval", e))?;
    emit(
        cfg,
        &report.to_json(),
        &crate::eval::render_markdown(std::slice::from_ref(&report)),
        out,
    )
}

fn cmd_ablate(cfg: &ResolvedConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset =
        load_dataset(cfg.dataset_path.as_ref().expect("validated")).map_err(|e| CliError::runtime("dataset", e))?;
    let retriever = open_retriever(cfg)?;
    let backend = make_backend(cfg.backend.as_deref().expect("validated"), cfg)?;
    let report = run_ablation(&dataset, &retriever, backend.as_ref(), cfg.k, &eval_options(cfg)?)
        .map_err(|e| CliError::runtime("eval", e))?;
    emit(cfg, &report.to_json(), &report.to_markdown(), out)
}

/// JSON goes to `report_out` with the markdown table on stdout, or the JSON
/// goes to stdout when no path is set.
fn emit(cfg: &ResolvedConfig, json: &str, markdown: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match &cfg.report_out {
        Some(path) => {
            write_file(path, format!("{json}\n").as_bytes())?;
            let _ = write!(out, "{markdown}");
        }
        None => {
            let _ = writeln!(out, "{json}");
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    let needs = match cli.command {
        Command::Ingest { .. } => Some(Needs::Ingest),
        Command::BuildIndex => Some(Needs::BuildIndex),
        Command::Ask { .. } => Some(Needs::Ask),
        Command::Eval => Some(Needs::Eval),
        Command::Ablate => Some(Needs::Ablate),
        Command::Selftest => None,
    };
    let cfg = resolve(cli, file, needs)?;
    match &cli.command {
        Command::Ingest { files, category, .. } => cmd_ingest(&cfg, files, category, out),
        Command::BuildIndex => cmd_build_index(&cfg, out),
        Command::Ask { question, options } => cmd_ask(&cfg, question, options, out),
        Command::Eval => cmd_eval(&cfg, out),
        Command::Ablate => cmd_ablate(&cfg, out),
        Command::Selftest => {
            let report = run_selftest(cfg.seed);
            let _ = writeln!(out, "{report}");
            if report.all_passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                Err(CliError::runtime("selftest", format!("failed: {}", names.join(", "))))
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out` and the JSON error line to `err`. Returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let e = CliError::Usage(first.to_string());
            let _ = writeln!(err, "{}", e.to_json_line());
            return e.exit_code();
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json_line());
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
