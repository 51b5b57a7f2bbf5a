//! Synthetic datasets and corpora for tests, examples and smoke runs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::{KnowledgeAwareMock, PlantedFact};
use crate::corpus::{save_corpus, Category, Corpus, CorpusBuilder, CorpusError, DEFAULT_CHUNK_CHARS};
use crate::eval::{save_dataset, EvalError, McqItem, Task};

/// `n` items with `n_options` options each. Correct answers are spread evenly
/// over positions (counts differ by at most one) and then shuffled.
pub fn balanced_mcq_dataset(n: usize, n_options: usize, seed: u64) -> Vec<McqItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut answers: Vec<usize> = (0..n).map(|i| i % n_options.max(1)).collect();
    answers.shuffle(&mut rng);
    answers
        .into_iter()
        .enumerate()
        .map(|(i, answer_index)| McqItem {
            item_id: format!("syn-{i:06}"),
            question: format!("Synthetic traffic question {i}: which option is correct?"),
            options: (0..n_options).map(|o| format!("option {o} of item {i}")).collect(),
            answer_index,
            task: Task::ALL[i % Task::ALL.len()],
            media: Vec::new(),
            n_source_frames: None,
        })
        .collect()
}

const ACTIONS: [&str; 4] = [
    "come to a full stop before the line",
    "yield to traffic from the left",
    "sound the horn once",
    "reduce speed to 20 km/h",
];

const DISTRACTORS: [(&str, Category, &str); 4] = [
    (
        "general-rules",
        Category::Regulation,
        "Drivers must keep to the right lane unless overtaking. Overtaking on the right is prohibited on motorways.\n\n\
         Headlights must be switched on between sunset and sunrise. Fog lights may only be used when visibility is below 50 metres.",
    ),
    (
        "violation-notes",
        Category::Violation,
        "Running a red light is a serious violation and carries penalty points. Parking on a pedestrian crossing obstructs visibility.\n\n\
         Using a handheld phone while driving is an offence. Failing to wear a seat belt is penalised for every occupant.",
    ),
    (
        "incident-log",
        Category::AbnormalEvent,
        "A stalled truck blocked two lanes during the evening peak. Emergency vehicles approached from the hard shoulder.\n\n\
         Debris on the carriageway caused sudden braking. Several vehicles swerved into the adjacent lane.",
    ),
    (
        "operations-guide",
        Category::ManagementGuideline,
        "Traffic officers should set up cones at least 100 metres before a lane closure. Variable message signs announce the closure in advance.\n\n\
         Signal timing is adjusted during school hours. Pedestrian phases are extended near hospitals.",
    ),
];

/// A corpus and dataset where each question is answerable only through one
/// corpus chunk that shares the question's unique codeword.
#[derive(Debug, Clone)]
pub struct PlantedFactFixture {
    pub corpus: Corpus,
    pub dataset: Vec<McqItem>,
    pub facts: Vec<PlantedFact>,
    /// Option the knowledge-aware mock picks when the fact is absent.
    pub fallback_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureFiles {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub knowledge: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn codeword(rng: &mut impl Rng) -> String {
    (0..8).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Builds the fixture. Item `i` expects option `i % 4`, and the fallback is
/// option 0, so without the fact a quarter of items (rounded up) are right.
pub fn planted_fact_fixture(n_items: usize, seed: u64) -> PlantedFactFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut codes = Vec::with_capacity(n_items);
    while codes.len() < n_items {
        let code = codeword(&mut rng);
        if seen.insert(code.clone()) {
            codes.push(code);
        }
    }

    let mut facts = Vec::with_capacity(n_items);
    let mut dataset = Vec::with_capacity(n_items);
    for (i, code) in codes.iter().enumerate() {
        let answer_index = i % ACTIONS.len();
        let item_id = format!("planted-{i:04}");
        facts.push(PlantedFact {
            item_id: item_id.clone(),
            fact: format!(
                "Rule {code} requires drivers at a {code} junction to {}.",
                ACTIONS[answer_index]
            ),
            answer_index,
        });
        dataset.push(McqItem {
            item_id,
            question: format!("What does rule {code} require at a {code} junction?"),
            options: ACTIONS.iter().map(|a| a.to_string()).collect(),
            answer_index,
            task: Task::ALL[i % 6],
            media: Vec::new(),
            n_source_frames: None,
        });
    }

    let mut builder = CorpusBuilder::new();
    for (name, category, text) in DISTRACTORS {
        builder
            .add_document(text, name, category, DEFAULT_CHUNK_CHARS)
            .expect("distractor text is well formed");
    }
    let planted: Vec<&str> = facts.iter().map(|f| f.fact.as_str()).collect();
    if !planted.is_empty() {
        builder
            .add_document(
                &planted.join("\n\n"),
                "planted-rules",
                Category::AuthoritativeInterpretation,
                DEFAULT_CHUNK_CHARS,
            )
            .expect("fact text is well formed");
    }
    let corpus = builder.build().expect("ids are assigned in order");

    PlantedFactFixture {
        corpus,
        dataset,
        facts,
        fallback_index: 0,
    }
}

impl PlantedFactFixture {
    pub fn knowledge_mock(&self) -> KnowledgeAwareMock {
        KnowledgeAwareMock::new(self.facts.clone(), self.fallback_index)
    }

    /// Accuracy the mock reaches when no fact is ever shown.
    pub fn fallback_accuracy(&self) -> f64 {
        let hits = self
            .dataset
            .iter()
            .filter(|i| i.answer_index == self.fallback_index)
            .count();
        hits as f64 / self.dataset.len().max(1) as f64
    }

    /// Writes `corpus.jsonl`, `dataset.jsonl` and `knowledge.json` (the
    /// script for `mock:knowledge:<path>`) into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<FixtureFiles, FixtureError> {
        #[derive(Serialize)]
        struct Script<'a> {
            fallback_index: usize,
            facts: &'a [PlantedFact],
        }
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| FixtureError::Io {
            path: dir.into(),
            source,
        })?;
        let files = FixtureFiles {
            corpus: dir.join("corpus.jsonl"),
            dataset: dir.join("dataset.jsonl"),
            knowledge: dir.join("knowledge.json"),
        };
        save_corpus(&self.corpus, &files.corpus)?;
        save_dataset(&self.dataset, &files.dataset)?;
        let script = Script {
            fallback_index: self.fallback_index,
            facts: &self.facts,
        };
        let json = serde_json::to_string_pretty(&script).expect("script serializes");
        std::fs::write(&files.knowledge, json).map_err(|source| FixtureError::Io {
            path: files.knowledge.clone(),
            source,
        })?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_answers() {
        let items = balanced_mcq_dataset(1000, 4, 3);
        let mut counts = [0; 4];
        for i in &items {
            counts[i.answer_index] += 1;
            i.validate().unwrap();
        }
        assert_eq!(counts, [250; 4]);
        assert_eq!(items, balanced_mcq_dataset(1000, 4, 3));
    }

    #[test]
    fn every_fact_is_one_chunk() {
        let fx = planted_fact_fixture(12, 1);
        for f in &fx.facts {
            assert_eq!(
                fx.corpus.chunks().iter().filter(|c| c.text == f.fact).count(),
                1,
                "{}",
                f.fact
            );
        }
        assert_eq!(fx.fallback_accuracy(), 0.25);
    }
}
