//! Prompt assembly and answer extraction for multiple-choice questions.
//!
//! The default layout puts the question first, then options, then the
//! retrieved knowledge in rank order, then the chain-of-thought directive,
//! and finally the answer-format line. Blocks are separated by a blank line
//! and disabled blocks are dropped.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::vector_index::RetrievalResult;

pub const COT_DIRECTIVE: &str =
    "First, break the problem into steps and reason through each step explicitly. Then give your final answer.";
pub const KNOWLEDGE_HEADER: &str = "Relevant traffic knowledge:";
pub const ANSWER_FORMAT: &str = "End your reply with `Answer: <LETTER>`";
pub const MAX_OPTIONS: usize = 8;
pub const OPTION_LETTERS: [char; MAX_OPTIONS] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H'];

const PLACEHOLDERS: [&str; 5] = ["question", "options", "knowledge", "cot", "answer_format"];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("at most {MAX_OPTIONS} options are supported, got {0}")]
    TooManyOptions(usize),
    #[error("retrieved chunk {0} has no text")]
    MissingChunk(u64),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnswerError {
    #[error("no options to choose from")]
    NoOptions,
    #[error("no answer letter found in model output")]
    Unparseable,
}

/// Resolves chunk ids to their text.
pub trait ChunkTexts {
    fn chunk_text(&self, chunk_id: u64) -> Option<&str>;
}

impl ChunkTexts for Corpus {
    fn chunk_text(&self, chunk_id: u64) -> Option<&str> {
        self.get(chunk_id).map(|c| c.text.as_str())
    }
}

impl ChunkTexts for HashMap<u64, String> {
    fn chunk_text(&self, chunk_id: u64) -> Option<&str> {
        self.get(&chunk_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: u64,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub question: String,
    pub options: Vec<String>,
    pub retrieved: Vec<RetrievedChunk>,
    pub cot_enabled: bool,
    pub rag_enabled: bool,
    pub rendered: String,
}

/// Prompt layout. The default joins the blocks; a custom template substitutes
/// `{question}`, `{options}`, `{knowledge}`, `{cot}` and `{answer_format}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptTemplate {
    custom: Option<String>,
}

impl PromptTemplate {
    pub fn custom(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if !text.contains("{question}") {
            return Err(PromptError::Template("template lacks a {question} placeholder".into()));
        }
        Ok(PromptTemplate { custom: Some(text) })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::custom(text)
    }

    fn render(&self, blocks: &[(&str, String); 5]) -> String {
        match &self.custom {
            None => blocks
                .iter()
                .map(|(_, b)| b.as_str())
                .filter(|b| !b.is_empty())
                .collect::<Vec<_>>()
                .join("\n\n"),
            Some(template) => substitute(template, blocks),
        }
    }
}

/// Single pass, so placeholder-looking text inside values is left alone.
fn substitute(template: &str, blocks: &[(&str, String); 5]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            blocks.iter().find(|(n, _)| *n == name).map(|(_, v)| (v, close))
        });
        match hit {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Assembles a prompt with the default template.
pub fn assemble_prompt(
    question: &str,
    options: &[String],
    retrieval: &RetrievalResult,
    texts: &dyn ChunkTexts,
    cot: bool,
    rag: bool,
) -> Result<PromptBundle, PromptError> {
    assemble_prompt_with(
        &PromptTemplate::default(),
        question,
        options,
        retrieval,
        texts,
        cot,
        rag,
    )
}

pub fn assemble_prompt_with(
    template: &PromptTemplate,
    question: &str,
    options: &[String],
    retrieval: &RetrievalResult,
    texts: &dyn ChunkTexts,
    cot: bool,
    rag: bool,
) -> Result<PromptBundle, PromptError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if options.len() > MAX_OPTIONS {
        return Err(PromptError::TooManyOptions(options.len()));
    }

    let retrieved = if rag {
        retrieval
            .ranked
            .iter()
            .map(|hit| {
                texts
                    .chunk_text(hit.chunk_id)
                    .map(|t| RetrievedChunk {
                        chunk_id: hit.chunk_id,
                        text: t.to_string(),
                        score: hit.score,
                    })
                    .ok_or(PromptError::MissingChunk(hit.chunk_id))
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };

    let options_block = if options.is_empty() {
        String::new()
    } else {
        let lines: Vec<String> = options
            .iter()
            .zip(OPTION_LETTERS)
            .map(|(o, l)| format!("{l}. {o}"))
            .collect();
        format!("Options:\n{}", lines.join("\n"))
    };
    let knowledge_block = if retrieved.is_empty() {
        String::new()
    } else {
        let items: Vec<String> = retrieved
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}", i + 1, c.text))
            .collect();
        format!("{KNOWLEDGE_HEADER}\n{}", items.join("\n"))
    };
    let blocks = [
        (PLACEHOLDERS[0], format!("Question: {question}")),
        (PLACEHOLDERS[1], options_block),
        (PLACEHOLDERS[2], knowledge_block),
        (
            PLACEHOLDERS[3],
            if cot { COT_DIRECTIVE.to_string() } else { String::new() },
        ),
        (
            PLACEHOLDERS[4],
            if options.is_empty() {
                String::new()
            } else {
                ANSWER_FORMAT.to_string()
            },
        ),
    ];
    let rendered = template.render(&blocks);

    Ok(PromptBundle {
        question: question.to_string(),
        options: options.to_vec(),
        retrieved,
        cot_enabled: cot,
        rag_enabled: rag,
        rendered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Marker,
    FallbackLetter,
}

/// Parsed choice. `matched_span` is a byte range into the model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerExtraction {
    pub choice_index: usize,
    pub matched_span: (usize, usize),
    pub method: ExtractionMethod,
}

pub fn letter_for(index: usize) -> Option<char> {
    OPTION_LETTERS.get(index).copied()
}

fn letter_index(c: char, n_options: usize) -> Option<usize> {
    OPTION_LETTERS.iter().position(|&l| l == c).filter(|&i| i < n_options)
}

fn is_boundary(c: Option<char>) -> bool {
    c.is_none_or(|c| !c.is_alphanumeric())
}

/// Picks the model's chosen option.
///
/// The last `Answer:` marker (any case) followed by an in-range letter wins.
/// Failing that, the last standalone in-range capital letter wins.
pub fn extract_answer(model_output: &str, options: &[String]) -> Result<AnswerExtraction, AnswerError> {
    let n = options.len().min(MAX_OPTIONS);
    if n == 0 {
        return Err(AnswerError::NoOptions);
    }

    const MARKER: &str = "answer:";
    let bytes = model_output.as_bytes();
    let mut marker_hits = Vec::new();
    for start in 0..bytes.len().saturating_sub(MARKER.len() - 1) {
        if bytes[start..start + MARKER.len()].eq_ignore_ascii_case(MARKER.as_bytes()) {
            marker_hits.push(start);
        }
    }
    for &start in marker_hits.iter().rev() {
        let after = &model_output[start + MARKER.len()..];
        let trimmed = after.trim_start();
        let letter_at = start + MARKER.len() + (after.len() - trimmed.len());
        let mut chars = trimmed.chars();
        if let Some(c) = chars.next() {
            if let Some(idx) = letter_index(c, n) {
                if is_boundary(chars.next()) {
                    return Ok(AnswerExtraction {
                        choice_index: idx,
                        matched_span: (start, letter_at + c.len_utf8()),
                        method: ExtractionMethod::Marker,
                    });
                }
            }
        }
    }

    let mut prev: Option<char> = None;
    let mut found = None;
    let mut iter = model_output.char_indices().peekable();
    while let Some((pos, c)) = iter.next() {
        let next = iter.peek().map(|&(_, c)| c);
        if is_boundary(prev) && is_boundary(next) {
            if let Some(idx) = letter_index(c, n) {
                found = Some((idx, pos));
            }
        }
        prev = Some(c);
    }
    found
        .map(|(idx, pos)| AnswerExtraction {
            choice_index: idx,
            matched_span: (pos, pos + 1),
            method: ExtractionMethod::FallbackLetter,
        })
        .ok_or(AnswerError::Unparseable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector_index::ScoredChunk;

    fn opts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("option {i}")).collect()
    }

    fn texts() -> HashMap<u64, String> {
        HashMap::from([
            (3, "Speed limit in school zones is 30 km/h.".to_string()),
            (8, "Amber light means prepare to stop.".to_string()),
        ])
    }

    #[test]
    fn everything_off_is_question_only() {
        let b = assemble_prompt(
            "Is the car speeding?",
            &[],
            &RetrievalResult::default(),
            &texts(),
            false,
            false,
        )
        .unwrap();
        assert_eq!(b.rendered, "Question: Is the car speeding?");
        assert!(b.retrieved.is_empty());
    }

    #[test]
    fn retrieval_ignored_when_rag_off() {
        let r = RetrievalResult {
            ranked: vec![ScoredChunk {
                chunk_id: 3,
                score: 0.9,
            }],
        };
        let b = assemble_prompt("Q?", &opts(2), &r, &texts(), true, false).unwrap();
        assert!(b.retrieved.is_empty());
        assert!(!b.rendered.contains(KNOWLEDGE_HEADER));
    }

    #[test]
    fn missing_chunk_text_is_an_error() {
        let r = RetrievalResult {
            ranked: vec![ScoredChunk {
                chunk_id: 42,
                score: 0.9,
            }],
        };
        assert!(matches!(
            assemble_prompt("Q?", &opts(2), &r, &texts(), false, true),
            Err(PromptError::MissingChunk(42))
        ));
    }

    #[test]
    fn preconditions() {
        let r = RetrievalResult::default();
        assert!(matches!(
            assemble_prompt("  ", &[], &r, &texts(), false, false),
            Err(PromptError::EmptyQuestion)
        ));
        assert!(matches!(
            assemble_prompt("Q", &opts(9), &r, &texts(), false, false),
            Err(PromptError::TooManyOptions(9))
        ));
    }

    #[test]
    fn custom_template_substitutes_once() {
        let t = PromptTemplate::custom("<<{question}>>\n{cot}|{answer_format}|{unknown}").unwrap();
        let b = assemble_prompt_with(
            &t,
            "why {cot}?",
            &opts(2),
            &RetrievalResult::default(),
            &texts(),
            true,
            false,
        )
        .unwrap();
        assert_eq!(
            b.rendered,
            format!("<<Question: why {{cot}}?>>\n{COT_DIRECTIVE}|{ANSWER_FORMAT}|{{unknown}}")
        );
        assert!(PromptTemplate::custom("no placeholder").is_err());
    }

    #[test]
    fn marker_examples() {
        let o = opts(4);
        let a = extract_answer("...reasoning... Answer: C", &o).unwrap();
        assert_eq!((a.choice_index, a.method), (2, ExtractionMethod::Marker));
        assert_eq!(
            &"...reasoning... Answer: C"[a.matched_span.0..a.matched_span.1],
            "Answer: C"
        );

        let a = extract_answer("I think B. No - Answer: A", &o).unwrap();
        assert_eq!((a.choice_index, a.method), (0, ExtractionMethod::Marker));

        let a = extract_answer("ANSWER:\n  d", &o);
        // lowercase letters are not accepted after the marker
        assert_eq!(a.unwrap_err(), AnswerError::Unparseable);
    }

    #[test]
    fn fallback_examples() {
        let o = opts(4);
        let a = extract_answer("The answer is clearly (B)", &o).unwrap();
        assert_eq!((a.choice_index, a.method), (1, ExtractionMethod::FallbackLetter));
        assert_eq!(a.matched_span, (23, 24));
    }

    #[test]
    fn out_of_range_marker_falls_through() {
        let o = opts(3);
        // D is not an option, so the earlier marker is used
        let a = extract_answer("Answer: B ... Answer: D", &o).unwrap();
        assert_eq!((a.choice_index, a.method), (1, ExtractionMethod::Marker));
        // marker letter glued to a word is not a letter
        let a = extract_answer("Answer: Because of C", &o).unwrap();
        assert_eq!((a.choice_index, a.method), (2, ExtractionMethod::FallbackLetter));
    }

    #[test]
    fn unparseable_and_no_options() {
        assert_eq!(
            extract_answer("no idea", &opts(4)).unwrap_err(),
            AnswerError::Unparseable
        );
        assert_eq!(extract_answer("", &opts(4)).unwrap_err(), AnswerError::Unparseable);
        assert_eq!(extract_answer("Answer: A", &[]).unwrap_err(), AnswerError::NoOptions);
    }

    #[test]
    fn multibyte_output_is_safe() {
        let a = extract_answer("答案：Answer: B。", &opts(4)).unwrap();
        assert_eq!(a.choice_index, 1);
    }
}
