//! Query-time retrieval session binding a corpus, its vector database and
//! the embedder that produced it.

use std::sync::Arc;

use crate::corpus::Corpus;
use crate::embedding::{embed_corpus, Embedder, EmbeddingError, EmbeddingProviderConfig};
use crate::prompting::ChunkTexts;
use crate::vector_index::{top_k, IndexError, RetrievalResult, VectorDatabase};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("index was built with provider {index:?} but queries use {query:?}")]
    ProviderMismatch {
        index: Box<EmbeddingProviderConfig>,
        query: Box<EmbeddingProviderConfig>,
    },
    #[error("index entry {0} has no chunk in the corpus")]
    UnknownChunk(u64),
}

/// Queries and chunks are always embedded by the same provider; constructors
/// reject anything else.
#[derive(Clone)]
pub struct Retriever {
    corpus: Arc<Corpus>,
    db: Arc<VectorDatabase>,
    embedder: Arc<dyn Embedder>,
}

impl Retriever {
    /// Embeds every chunk of `corpus` with `embedder`.
    pub fn build(corpus: Corpus, embedder: Arc<dyn Embedder>) -> Result<Self, RetrievalError> {
        let entries = embed_corpus(&corpus, embedder.as_ref())?;
        let db = VectorDatabase::from_entries(embedder.config().dim, entries)?;
        Ok(Retriever {
            corpus: Arc::new(corpus),
            db: Arc::new(db),
            embedder,
        })
    }

    /// Pairs a prebuilt index with a query embedder. `index_provider` is the
    /// configuration the index was built with.
    pub fn from_index(
        corpus: Corpus,
        db: VectorDatabase,
        embedder: Arc<dyn Embedder>,
        index_provider: &EmbeddingProviderConfig,
    ) -> Result<Self, RetrievalError> {
        if index_provider != embedder.config() {
            return Err(RetrievalError::ProviderMismatch {
                index: Box::new(index_provider.clone()),
                query: Box::new(embedder.config().clone()),
            });
        }
        if db.dim() != embedder.config().dim {
            return Err(IndexError::DimensionMismatch {
                expected: db.dim(),
                actual: embedder.config().dim,
            }
            .into());
        }
        if let Some((id, _)) = db.entries().find(|(id, _)| corpus.get(*id).is_none()) {
            return Err(RetrievalError::UnknownChunk(id));
        }
        Ok(Retriever {
            corpus: Arc::new(corpus),
            db: Arc::new(db),
            embedder,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn database(&self) -> &VectorDatabase {
        &self.db
    }

    pub fn provider(&self) -> &EmbeddingProviderConfig {
        self.embedder.config()
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult, RetrievalError> {
        let q = self.embedder.embed(query)?;
        Ok(top_k(&self.db, &q, k)?)
    }
}

impl ChunkTexts for Retriever {
    fn chunk_text(&self, chunk_id: u64) -> Option<&str> {
        self.corpus.chunk_text(chunk_id)
    }
}
