//! Flat (exhaustive) vector store with epsilon-stabilized cosine ranking.
//!
//! Index file layout, little-endian:
//!
//! ```text
//! magic  "TRAG"            4 bytes
//! version u16 = 1
//! dim     u32
//! count   u64
//! count × { chunk_id u64, dim × f64 }
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::embedding::EmbeddingVector;

/// Added to the product of norms in the cosine denominator.
pub const COSINE_EPSILON: f64 = 1e-8;
/// Number of chunks retrieved per query unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 5;

pub const INDEX_MAGIC: &[u8; 4] = b"TRAG";
pub const INDEX_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate chunk_id {0}")]
    DuplicateId(u64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index dimension must be at least 1")]
    ZeroDim,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:?}, expected \"TRAG\"")]
    BadMagic([u8; 4]),
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u16),
    #[error("index file truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("payload length mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("invalid vector for chunk {chunk_id}: {reason}")]
    InvalidVector { chunk_id: u64, reason: String },
}

/// `(a · b) / (‖a‖₂ ‖b‖₂ + 1e-8)`, accumulated in index order.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(cosine_raw(a.values(), b.values()))
}

pub(crate) fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt() + COSINE_EPSILON)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorDatabase {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<EmbeddingVector>,
}

impl VectorDatabase {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDim);
        }
        Ok(VectorDatabase {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
        })
    }

    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (u64, EmbeddingVector)>,
    ) -> Result<Self, IndexError> {
        let mut db = Self::new(dim)?;
        let mut seen = HashSet::new();
        for (id, v) in entries {
            if !seen.insert(id) {
                return Err(IndexError::DuplicateId(id));
            }
            db.push_unchecked_id(id, v)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, chunk_id: u64, vector: EmbeddingVector) -> Result<(), IndexError> {
        if self.ids.contains(&chunk_id) {
            return Err(IndexError::DuplicateId(chunk_id));
        }
        self.push_unchecked_id(chunk_id, vector)
    }

    fn push_unchecked_id(&mut self, id: u64, v: EmbeddingVector) -> Result<(), IndexError> {
        if v.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &EmbeddingVector)> {
        self.ids.iter().copied().zip(self.vectors.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredChunk {
    pub chunk_id: u64,
    pub score: f64,
}

/// Ranked hits, best first. Equal scores are ordered by ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalResult {
    pub ranked: Vec<ScoredChunk>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.ranked.iter().map(|s| s.chunk_id).collect()
    }
}

fn rank_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id))
}

/// Returns the `min(k, M)` best chunks for `query`.
pub fn top_k(db: &VectorDatabase, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if query.dim() != db.dim {
        return Err(IndexError::DimensionMismatch {
            expected: db.dim,
            actual: query.dim(),
        });
    }
    let mut scored: Vec<ScoredChunk> = db
        .entries()
        .map(|(chunk_id, v)| ScoredChunk {
            chunk_id,
            score: cosine_raw(query.values(), v.values()),
        })
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(RetrievalResult { ranked: scored })
}

/// Serializes `db` into the index byte layout.
pub fn encode_index(db: &VectorDatabase) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + db.len() * (8 + 8 * db.dim));
    buf.extend_from_slice(INDEX_MAGIC);
    buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    buf.extend_from_slice(&(db.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for (id, v) in db.entries() {
        buf.extend_from_slice(&id.to_le_bytes());
        for x in v.values() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn decode_index(bytes: &[u8]) -> Result<VectorDatabase, IndexError> {
    let actual = bytes.len() as u64;
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != INDEX_MAGIC {
            return Err(IndexError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(IndexError::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != INDEX_MAGIC {
        return Err(IndexError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(IndexError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    if dim == 0 {
        return Err(IndexError::ZeroDim);
    }
    let record = 8 + 8 * dim as u64;
    let expected = count
        .checked_mul(record)
        .and_then(|p| p.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    match actual.cmp(&expected) {
        Ordering::Less => return Err(IndexError::Truncated { expected, actual }),
        Ordering::Greater => return Err(IndexError::SizeMismatch { expected, actual }),
        Ordering::Equal => {}
    }
    let mut entries = Vec::with_capacity(count as usize);
    for rec in bytes[HEADER_LEN..].chunks_exact(record as usize) {
        let id = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let values: Vec<f64> = rec[8..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let v = EmbeddingVector::new(values).map_err(|e| IndexError::InvalidVector {
            chunk_id: id,
            reason: e.to_string(),
        })?;
        entries.push((id, v));
    }
    VectorDatabase::from_entries(dim, entries)
}

pub fn save_index(db: &VectorDatabase, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    let io_err = |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    w.write_all(&encode_index(db)).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<VectorDatabase, IndexError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_index(&bytes)
}
