//! Traffic-domain knowledge corpus: document ingestion, sentence-aware
//! chunking, and the JSON-lines corpus file.
//!
//! Chunking is deterministic. Blank lines are hard paragraph boundaries,
//! sentences are atomic, and sentences inside a paragraph are greedily packed
//! up to a character budget. A sentence longer than the budget becomes its own
//! oversized chunk instead of being split.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Smallest accepted chunk budget.
pub const MIN_CHUNK_CHARS: usize = 64;
/// Budget used when callers do not pick one.
pub const DEFAULT_CHUNK_CHARS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("max_chunk_chars must be at least {MIN_CHUNK_CHARS}, got {0}")]
    BudgetTooSmall(usize),
    #[error("document is not valid UTF-8: {0}")]
    Decode(#[from] std::str::Utf8Error),
    #[error("cannot open corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate chunk_id {chunk_id}")]
    DuplicateId { line: usize, chunk_id: u64 },
    #[error("line {line}: chunk_id {chunk_id} is not greater than the previous id")]
    IdOrder { line: usize, chunk_id: u64 },
    #[error("line {line}: unknown category {value:?}")]
    UnknownCategory { line: usize, value: String },
    #[error("line {line}: invalid chunk: {reason}")]
    InvalidChunk { line: usize, reason: String },
}

/// Kind of knowledge a source document carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Regulation,
    Violation,
    AbnormalEvent,
    ManagementGuideline,
    AuthoritativeInterpretation,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Regulation,
        Category::Violation,
        Category::AbnormalEvent,
        Category::ManagementGuideline,
        Category::AuthoritativeInterpretation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Regulation => "regulation",
            Category::Violation => "violation",
            Category::AbnormalEvent => "abnormal_event",
            Category::ManagementGuideline => "management_guideline",
            Category::AuthoritativeInterpretation => "authoritative_interpretation",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Half-open `[start, end)` offsets, counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeChunk {
    pub chunk_id: u64,
    pub text: String,
    pub source_doc: String,
    pub category: Category,
    pub char_span: CharSpan,
}

/// Immutable ordered set of chunks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    chunks: Vec<KnowledgeChunk>,
    doc_count: usize,
}

impl Corpus {
    /// Builds a corpus, checking chunk invariants. `doc_count` is derived
    /// from the distinct `source_doc` values.
    pub fn from_chunks(chunks: Vec<KnowledgeChunk>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut prev: Option<u64> = None;
        for (i, chunk) in chunks.iter().enumerate() {
            let line = i + 1;
            validate_chunk(chunk).map_err(|reason| CorpusError::InvalidChunk { line, reason })?;
            if !seen.insert(chunk.chunk_id) {
                return Err(CorpusError::DuplicateId {
                    line,
                    chunk_id: chunk.chunk_id,
                });
            }
            if prev.is_some_and(|p| chunk.chunk_id <= p) {
                return Err(CorpusError::IdOrder {
                    line,
                    chunk_id: chunk.chunk_id,
                });
            }
            prev = Some(chunk.chunk_id);
        }
        let doc_count = chunks
            .iter()
            .map(|c| c.source_doc.as_str())
            .collect::<HashSet<_>>()
            .len();
        Ok(Corpus { chunks, doc_count })
    }

    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// Looks up a chunk by id. Ids are strictly increasing, so this is a
    /// binary search.
    pub fn get(&self, chunk_id: u64) -> Option<&KnowledgeChunk> {
        self.chunks
            .binary_search_by_key(&chunk_id, |c| c.chunk_id)
            .ok()
            .map(|i| &self.chunks[i])
    }
}

fn validate_chunk(chunk: &KnowledgeChunk) -> Result<(), String> {
    if chunk.text.is_empty() {
        return Err("text is empty".into());
    }
    if chunk.text.trim() != chunk.text {
        return Err("text has leading or trailing whitespace".into());
    }
    if chunk.char_span.start >= chunk.char_span.end {
        return Err(format!(
            "span start {} is not before end {}",
            chunk.char_span.start, chunk.char_span.end
        ));
    }
    Ok(())
}

/// Accumulates documents into a corpus with globally increasing chunk ids.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    chunks: Vec<KnowledgeChunk>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_document(
        &mut self,
        raw_text: &str,
        source_id: &str,
        category: Category,
        max_chunk_chars: usize,
    ) -> Result<&mut Self, CorpusError> {
        let offset = self.chunks.len() as u64;
        let chunks = ingest_document(raw_text, source_id, category, max_chunk_chars)?;
        self.chunks.extend(chunks.into_iter().map(|mut c| {
            c.chunk_id += offset;
            c
        }));
        Ok(self)
    }

    pub fn build(self) -> Result<Corpus, CorpusError> {
        Corpus::from_chunks(self.chunks)
    }
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Same as [`ingest_document`] for raw bytes that must be UTF-8.
pub fn ingest_bytes(
    raw: &[u8],
    source_id: &str,
    category: Category,
    max_chunk_chars: usize,
) -> Result<Vec<KnowledgeChunk>, CorpusError> {
    let text = std::str::from_utf8(raw)?;
    ingest_document(text, source_id, category, max_chunk_chars)
}

/// Splits one document into chunks numbered from 0.
pub fn ingest_document(
    raw_text: &str,
    source_id: &str,
    category: Category,
    max_chunk_chars: usize,
) -> Result<Vec<KnowledgeChunk>, CorpusError> {
    if max_chunk_chars < MIN_CHUNK_CHARS {
        return Err(CorpusError::BudgetTooSmall(max_chunk_chars));
    }
    let chars: Vec<char> = raw_text.chars().collect();
    let mut out = Vec::new();

    for (p_start, p_end) in paragraphs(&chars) {
        let mut current: Option<(usize, usize, usize)> = None; // (start, end, normalized len)
        for (s_start, s_end) in sentences(&chars, p_start, p_end) {
            let len = normalized_len(&chars[s_start..s_end]);
            current = match current {
                Some((c_start, _, c_len)) if c_len + 1 + len <= max_chunk_chars => {
                    Some((c_start, s_end, c_len + 1 + len))
                }
                Some(done) => {
                    push_chunk(&mut out, &chars, done, source_id, category);
                    Some((s_start, s_end, len))
                }
                None => Some((s_start, s_end, len)),
            };
        }
        if let Some(done) = current {
            push_chunk(&mut out, &chars, done, source_id, category);
        }
    }
    Ok(out)
}

fn push_chunk(
    out: &mut Vec<KnowledgeChunk>,
    chars: &[char],
    (start, end, _): (usize, usize, usize),
    source_id: &str,
    category: Category,
) {
    let raw: String = chars[start..end].iter().collect();
    out.push(KnowledgeChunk {
        chunk_id: out.len() as u64,
        text: normalize_whitespace(&raw),
        source_doc: source_id.to_string(),
        category,
        char_span: CharSpan { start, end },
    });
}

fn normalized_len(chars: &[char]) -> usize {
    let mut len = 0;
    let mut in_gap = false;
    for &c in chars {
        if c.is_whitespace() {
            in_gap = true;
        } else {
            if in_gap && len > 0 {
                len += 1;
            }
            in_gap = false;
            len += 1;
        }
    }
    len
}

/// Paragraph spans, trimmed of surrounding whitespace. A paragraph ends at a
/// line that is empty or whitespace-only.
fn paragraphs(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut para: Option<(usize, usize)> = None;
    let mut line_start = 0;
    while line_start < chars.len() {
        let line_end = chars[line_start..]
            .iter()
            .position(|&c| c == '\n')
            .map_or(chars.len(), |p| line_start + p);
        let line = &chars[line_start..line_end];
        match line.iter().position(|c| !c.is_whitespace()) {
            None => {
                if let Some(p) = para.take() {
                    out.push(p);
                }
            }
            Some(first) => {
                let last = line.iter().rposition(|c| !c.is_whitespace()).unwrap();
                let (s, e) = (line_start + first, line_start + last + 1);
                para = Some(match para {
                    Some((ps, _)) => (ps, e),
                    None => (s, e),
                });
            }
        }
        line_start = line_end + 1;
    }
    if let Some(p) = para {
        out.push(p);
    }
    out
}

fn is_ascii_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_cjk_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '』' | '）')
}

/// Sentence spans inside `[start, end)`, each trimmed of whitespace.
fn sentences(chars: &[char], start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut s = start;
    let mut i = start;
    while i < end {
        let c = chars[i];
        if is_ascii_terminator(c) || is_cjk_terminator(c) {
            let mut j = i + 1;
            let mut cjk = is_cjk_terminator(c);
            while j < end && (is_ascii_terminator(chars[j]) || is_cjk_terminator(chars[j])) {
                cjk |= is_cjk_terminator(chars[j]);
                j += 1;
            }
            while j < end && is_closer(chars[j]) {
                j += 1;
            }
            if cjk || j == end || chars[j].is_whitespace() {
                push_trimmed(&mut out, chars, s, j);
                s = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    push_trimmed(&mut out, chars, s, end);
    out
}

fn push_trimmed(out: &mut Vec<(usize, usize)>, chars: &[char], s: usize, e: usize) {
    let slice = &chars[s..e];
    if let Some(first) = slice.iter().position(|c| !c.is_whitespace()) {
        let last = slice.iter().rposition(|c| !c.is_whitespace()).unwrap();
        out.push((s + first, s + last + 1));
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkRecord {
    chunk_id: u64,
    text: String,
    source_doc: String,
    category: String,
    span: [usize; 2],
}

/// Reads a JSON-lines corpus file. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    read_corpus(reader).map_err(|e| match e {
        ReadError::Io(source) => io_err(source),
        ReadError::Corpus(e) => e,
    })
}

enum ReadError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

fn read_corpus(reader: impl BufRead) -> Result<Corpus, ReadError> {
    let mut chunks = Vec::new();
    let mut seen = HashSet::new();
    let mut prev: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(ReadError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |e| ReadError::Corpus(e);
        let rec: ChunkRecord = serde_json::from_str(&line).map_err(|e| {
            fail(CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })
        })?;
        let category = rec.category.parse::<Category>().map_err(|_| {
            fail(CorpusError::UnknownCategory {
                line: line_no,
                value: rec.category.clone(),
            })
        })?;
        let chunk = KnowledgeChunk {
            chunk_id: rec.chunk_id,
            text: rec.text,
            source_doc: rec.source_doc,
            category,
            char_span: CharSpan {
                start: rec.span[0],
                end: rec.span[1],
            },
        };
        validate_chunk(&chunk).map_err(|reason| fail(CorpusError::InvalidChunk { line: line_no, reason }))?;
        if !seen.insert(chunk.chunk_id) {
            return Err(fail(CorpusError::DuplicateId {
                line: line_no,
                chunk_id: chunk.chunk_id,
            }));
        }
        if prev.is_some_and(|p| chunk.chunk_id <= p) {
            return Err(fail(CorpusError::IdOrder {
                line: line_no,
                chunk_id: chunk.chunk_id,
            }));
        }
        prev = Some(chunk.chunk_id);
        chunks.push(chunk);
    }
    Corpus::from_chunks(chunks).map_err(ReadError::Corpus)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for chunk in corpus.chunks() {
        let rec = ChunkRecord {
            chunk_id: chunk.chunk_id,
            text: chunk.text.clone(),
            source_doc: chunk.source_doc.clone(),
            category: chunk.category.as_str().to_string(),
            span: [chunk.char_span.start, chunk.char_span.end],
        };
        let line = serde_json::to_string(&rec).expect("chunk record serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
