//! Knowledge-grounded multiple-choice QA for traffic scenes.
//!
//! The pipeline chunks a curated traffic corpus ([`corpus`]), embeds it
//! ([`embedding`]), searches it by epsilon-stabilized cosine similarity
//! ([`vector_index`], [`retrieval`]), assembles chain-of-thought prompts and
//! parses answers ([`prompting`]), queries a model backend ([`backend`]) and
//! scores datasets under the Base / +CoT / +RAG ablation ladder ([`eval`]).
//! [`kernels`] holds double-precision reference implementations of the
//! model-side building blocks with gradient checks.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `ingest_corpus` | chunking documents and writing the corpus file |
//! | `retrieval_top_k` | embedding a corpus and ranking chunks for a query |
//! | `index_roundtrip` | the binary index format and its error cases |
//! | `prompt_and_extract` | prompt layouts and answer extraction |
//! | `frame_sampling` | picking 8 frames from a clip |
//! | `random_baseline` | the 25% chance floor on 4-option items |
//! | `planted_fact_ablation` | the full ladder on a fixture where retrieval decides |
//! | `remote_backend` | the HTTP backend against a local server |
//! | `kernels_tour` | every kernel plus the self-test table |
//! | `lora_adapter` | fitting a low-rank update by gradient descent |

pub mod backend;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod http;
pub mod kernels;
pub mod prompting;
pub mod retrieval;
pub mod vector_index;
