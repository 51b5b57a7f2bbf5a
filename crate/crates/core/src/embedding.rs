//! Text embedding providers.
//!
//! Two providers exist: a remote HTTP service and a seeded hash-projection
//! embedder for tests and offline runs. Queries and chunks must be embedded
//! with the same provider configuration; [`crate::retrieval::Retriever`]
//! enforces that at construction.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;
use twox_hash::XxHash64;

use crate::corpus::Corpus;
use crate::http::{self, HttpTransport, InFlightLimit, UreqTransport};

/// Embedding width of the reference text encoder.
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid embedding vector: {0}")]
    InvalidVector(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("embedding chunk {chunk_id} failed: {source}")]
    ChunkFailed {
        chunk_id: u64,
        #[source]
        source: Box<EmbeddingError>,
    },
}

/// A finite, non-empty vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector(format!(
                "element {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multiplies every element by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.values.iter().map(|v| v * alpha).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteService,
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub provider_kind: ProviderKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EmbeddingProviderConfig {
    pub fn deterministic(seed: u64, dim: usize) -> Self {
        EmbeddingProviderConfig {
            provider_kind: ProviderKind::DeterministicTest,
            dim,
            endpoint: None,
            seed: Some(seed),
        }
    }

    pub fn remote(endpoint: impl Into<String>, dim: usize) -> Self {
        EmbeddingProviderConfig {
            provider_kind: ProviderKind::RemoteService,
            dim,
            endpoint: Some(endpoint.into()),
            seed: None,
        }
    }

    /// Returns every violated field, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("embedding.dim must be at least 1".to_string());
        }
        match self.provider_kind {
            ProviderKind::RemoteService if self.endpoint.is_none() => {
                out.push("embedding.endpoint is required for remote_service".to_string())
            }
            ProviderKind::DeterministicTest if self.seed.is_none() => {
                out.push("embedding.seed is required for deterministic_test".to_string())
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EmbeddingError::Config(v.join("; ")))
        }
    }
}

/// Anything that turns text into an [`EmbeddingVector`].
pub trait Embedder: Send + Sync {
    fn config(&self) -> &EmbeddingProviderConfig;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Embeds `text` with `provider`.
pub fn embed(text: &str, provider: &dyn Embedder) -> Result<EmbeddingVector, EmbeddingError> {
    provider.embed(text)
}

/// One embedding per chunk, in corpus order.
pub fn embed_corpus(corpus: &Corpus, provider: &dyn Embedder) -> Result<Vec<(u64, EmbeddingVector)>, EmbeddingError> {
    corpus
        .chunks()
        .iter()
        .map(|chunk| {
            provider
                .embed(&chunk.text)
                .map(|v| (chunk.chunk_id, v))
                .map_err(|e| EmbeddingError::ChunkFailed {
                    chunk_id: chunk.chunk_id,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Builds the provider described by `config`.
pub fn provider_from_config(config: &EmbeddingProviderConfig) -> Result<Box<dyn Embedder>, EmbeddingError> {
    config.validate()?;
    Ok(match config.provider_kind {
        ProviderKind::DeterministicTest => Box::new(HashEmbedder::new(config.clone())?),
        ProviderKind::RemoteService => Box::new(RemoteEmbedder::new(
            config.clone(),
            UreqTransport::new(Duration::from_secs(60)),
        )?),
    })
}

fn check_text(text: &str) -> Result<(), EmbeddingError> {
    if text.trim().is_empty() {
        Err(EmbeddingError::InvalidInput("text is empty".into()))
    } else {
        Ok(())
    }
}

/// Seeded hash-projection embedder.
///
/// Each whitespace token is lowercased and stripped of surrounding
/// punctuation, hashed with the seed, and expanded into a pseudo-random
/// direction. Directions are summed over the sorted token multiset and the
/// result is scaled to unit length, so the output depends only on the token
/// multiset, the seed and the width.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    config: EmbeddingProviderConfig,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let seed = match (config.provider_kind, config.seed) {
            (ProviderKind::DeterministicTest, Some(seed)) => seed,
            _ => return Err(EmbeddingError::Config("hash embedder needs deterministic_test".into())),
        };
        Ok(HashEmbedder { config, seed })
    }

    pub fn with_seed(seed: u64, dim: usize) -> Result<Self, EmbeddingError> {
        Self::new(EmbeddingProviderConfig::deterministic(seed, dim))
    }
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            if t.is_empty() {
                raw.to_string()
            } else {
                t
            }
        })
        .collect()
}

impl Embedder for HashEmbedder {
    fn config(&self) -> &EmbeddingProviderConfig {
        &self.config
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        check_text(text)?;
        let mut toks = tokens(text);
        toks.sort_unstable();
        let dim = self.config.dim;
        let mut acc = vec![0.0f64; dim];
        for tok in &toks {
            let mut hasher = XxHash64::with_seed(self.seed);
            hasher.write(tok.as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
            for a in acc.iter_mut() {
                *a += rng.gen_range(-1.0..1.0);
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(acc)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
    dim: usize,
}

/// Client for the `POST {endpoint}/embed` wire contract.
pub struct RemoteEmbedder<T: HttpTransport = UreqTransport> {
    config: EmbeddingProviderConfig,
    url: String,
    transport: T,
    api_key: Option<String>,
    limit: InFlightLimit,
}

impl<T: HttpTransport> RemoteEmbedder<T> {
    pub fn new(config: EmbeddingProviderConfig, transport: T) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let endpoint = match (config.provider_kind, &config.endpoint) {
            (ProviderKind::RemoteService, Some(e)) => e.clone(),
            _ => return Err(EmbeddingError::Config("remote embedder needs remote_service".into())),
        };
        Ok(RemoteEmbedder {
            url: http::join_url(&endpoint, "/embed"),
            config,
            transport,
            api_key: http::api_key_from_env(),
            limit: InFlightLimit::new(http::DEFAULT_MAX_IN_FLIGHT),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limit = InFlightLimit::new(max);
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Embeds several texts in one request. Response order matches `texts`.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        for t in texts {
            check_text(t)?;
        }
        let body = serde_json::to_value(EmbedRequest { texts }).expect("request serializes");
        let reply = {
            let _slot = self.limit.acquire();
            self.transport
                .post_json(&self.url, &body, self.api_key.as_deref())
                .map_err(|e| EmbeddingError::Provider(e.to_string()))?
        };
        if reply.status != 200 {
            return Err(EmbeddingError::Provider(format!(
                "status {}: {}",
                reply.status, reply.body
            )));
        }
        let parsed: EmbedResponse = serde_json::from_str(&reply.body)
            .map_err(|e| EmbeddingError::Provider(format!("bad response body: {e}")))?;
        if parsed.dim != self.config.dim {
            return Err(EmbeddingError::Provider(format!(
                "dimension mismatch: expected {}, service reported {}",
                self.config.dim, parsed.dim
            )));
        }
        if parsed.embeddings.len() != texts.len() {
            return Err(EmbeddingError::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.embeddings.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|values| {
                if values.len() != self.config.dim {
                    return Err(EmbeddingError::Provider(format!(
                        "dimension mismatch: expected {}, got vector of {}",
                        self.config.dim,
                        values.len()
                    )));
                }
                EmbeddingVector::new(values).map_err(|e| EmbeddingError::Provider(e.to_string()))
            })
            .collect()
    }
}

impl<T: HttpTransport> Embedder for RemoteEmbedder<T> {
    fn config(&self) -> &EmbeddingProviderConfig {
        &self.config
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.pop().expect("length checked"))
    }
}
