//! Pluggable word embedding providers.
//!
//! Three provider kinds cover the contexts this crate runs in: a static
//! lookup table in the word2vec text format, a store of precomputed
//! per-token contextual vectors keyed by sentence id, and a bit-exact
//! deterministic hashed provider for tests and synthetic data. All
//! arithmetic is `f64` end to end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::rng::splitmix64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected header \"<count> <dim>\"")]
    BadHeader { line: usize },
    #[error("line {line}: expected {expected} values, found {got}")]
    RowArity {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse {value:?} as a float")]
    BadFloat { line: usize, value: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("duplicate word {word:?}")]
    DuplicateWord { word: String },
    #[error("header says {expected} entries, file has {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("duplicate sentence id {id:?}")]
    DuplicateId { id: String },
    #[error("record {id:?}: inconsistent vector dimension")]
    RaggedVectors { id: String },
    #[error("record {id:?}: dimension {got} does not match store dimension {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {source}")]
    Jsonl {
        line: usize,
        source: serde_json::Error,
    },
    #[error("sentence has no id required for contextual lookup")]
    MissingId,
    #[error("no stored vectors for sentence id {id:?}")]
    UnknownId { id: String },
    #[error("sentence {id:?} has {actual} tokens but {stored} stored vectors")]
    StoredLengthMismatch {
        id: String,
        stored: usize,
        actual: usize,
    },
    #[error("empty store")]
    EmptyStore,
}

/// Per-token embedding rows for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Vec<Vec<f64>>, dim: usize) -> Self {
        assert!(!rows.is_empty(), "embedding matrix needs at least one row");
        for row in &rows {
            assert_eq!(row.len(), dim, "embedding row dimension mismatch");
            assert!(row.iter().all(|x| x.is_finite()), "non-finite embedding");
        }
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// What a static table returns for a word it does not contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Zero row plus a logged warning.
    Zero,
    /// Deterministic hashed vector with the given seed.
    Hashed { seed: u64 },
}

/// Fixed word-to-vector lookup table.
#[derive(Debug, Clone)]
pub struct StaticTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    oov: OovPolicy,
}

impl StaticTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }
}

/// Loads a static table from word2vec text: a `"<count> <dim>"` header, then
/// one `"<word> <v_1> ... <v_dim>"` line per word.
pub fn load_static_table(text: &str, oov: OovPolicy) -> Result<StaticTable, EmbeddingError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header) = lines.next().ok_or(EmbeddingError::BadHeader { line: 1 })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match parts.as_slice() {
        [c, d] => (
            c.parse::<usize>()
                .map_err(|_| EmbeddingError::BadHeader { line: header_line + 1 })?,
            d.parse::<usize>()
                .map_err(|_| EmbeddingError::BadHeader { line: header_line + 1 })?,
        ),
        _ => return Err(EmbeddingError::BadHeader { line: header_line + 1 }),
    };
    if dim == 0 {
        return Err(EmbeddingError::BadHeader { line: header_line + 1 });
    }

    let mut entries = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line has a first field");
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(EmbeddingError::RowArity {
                line: line_no,
                expected: dim,
                got: values.len(),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for value in values {
            let x: f64 = value.parse().map_err(|_| EmbeddingError::BadFloat {
                line: line_no,
                value: value.to_string(),
            })?;
            if !x.is_finite() {
                return Err(EmbeddingError::NonFinite { line: line_no });
            }
            vector.push(x);
        }
        if entries.insert(word.to_string(), vector).is_some() {
            return Err(EmbeddingError::DuplicateWord { word: word.into() });
        }
    }
    if entries.len() != count {
        return Err(EmbeddingError::CountMismatch {
            expected: count,
            got: entries.len(),
        });
    }
    Ok(StaticTable { dim, entries, oov })
}

/// Configuration of the deterministic hashed provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedConfig {
    pub dim: usize,
    pub seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Bit-exact deterministic token vector: FNV-1a-64 over the token's UTF-8
/// bytes, XORed with the seed, then expanded one coordinate at a time with
/// splitmix64. Every coordinate lies in `[-1, 1)`.
pub fn hashed_vector(token: &str, cfg: &HashedConfig) -> Vec<f64> {
    assert!(cfg.dim >= 1, "hashed provider needs dim >= 1");
    let mut state = fnv1a64(token.as_bytes()) ^ cfg.seed;
    (0..cfg.dim)
        .map(|_| {
            state = splitmix64(state);
            ((state >> 11) as f64) * 2f64.powi(-53) * 2.0 - 1.0
        })
        .collect()
}

/// Precomputed per-token vectors keyed by sentence id (JSON-lines on disk,
/// one `{"id": ..., "vectors": [[...], ...]}` record per line).
#[derive(Debug, Clone)]
pub struct ContextualStore {
    dim: usize,
    entries: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ContextualRecord {
    id: String,
    vectors: Vec<Vec<f64>>,
}

impl ContextualStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: String, vectors: Vec<Vec<f64>>) -> Result<(), EmbeddingError> {
        for row in &vectors {
            if row.len() != self.dim {
                return Err(EmbeddingError::DimMismatch {
                    id: id.clone(),
                    expected: self.dim,
                    got: row.len(),
                });
            }
        }
        if self.entries.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId { id });
        }
        self.entries.insert(id, vectors);
        Ok(())
    }

    /// Serializes the store to JSON-lines, records sorted by id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, vectors) in &self.entries {
            let record = ContextualRecord {
                id: id.clone(),
                vectors: vectors.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses a contextual store from JSON-lines text.
pub fn load_contextual_store(text: &str) -> Result<ContextualStore, EmbeddingError> {
    let mut store: Option<ContextualStore> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ContextualRecord = serde_json::from_str(line).map_err(|source| {
            EmbeddingError::Jsonl {
                line: idx + 1,
                source,
            }
        })?;
        let dim = record
            .vectors
            .first()
            .map(Vec::len)
            .ok_or(EmbeddingError::RaggedVectors {
                id: record.id.clone(),
            })?;
        for row in &record.vectors {
            if row.len() != dim {
                return Err(EmbeddingError::RaggedVectors { id: record.id });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { line: idx + 1 });
            }
        }
        let store = store.get_or_insert_with(|| ContextualStore::new(dim));
        store.insert(record.id, record.vectors)?;
    }
    store.ok_or(EmbeddingError::EmptyStore)
}

/// Descriptor that names a provider without holding its data; stored inside
/// checkpoints so evaluation can reconstruct the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderDescriptor {
    Hashed { dim: usize, seed: u64 },
    Static { path: String, oov: OovPolicy },
    Contextual { path: String },
}

/// A contextual word embedding function: maps a sentence to one vector per
/// token.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Static(StaticTable),
    Contextual(ContextualStore),
    Hashed(HashedConfig),
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Static(t) => t.dim,
            EmbeddingProvider::Contextual(s) => s.dim,
            EmbeddingProvider::Hashed(c) => c.dim,
        }
    }

    /// Embeds a sentence, one row per token. Static and hashed providers are
    /// position-independent; the contextual provider returns stored rows
    /// verbatim.
    pub fn embed_sentence(&self, sentence: &Sentence) -> Result<EmbeddingMatrix, EmbeddingError> {
        match self {
            EmbeddingProvider::Hashed(cfg) => Ok(EmbeddingMatrix::new(
                sentence
                    .tokens()
                    .iter()
                    .map(|t| hashed_vector(t, cfg))
                    .collect(),
                cfg.dim,
            )),
            EmbeddingProvider::Static(table) => {
                let rows = sentence
                    .tokens()
                    .iter()
                    .map(|token| match table.get(token) {
                        Some(v) => v.to_vec(),
                        None => match table.oov {
                            OovPolicy::Zero => {
                                log::warn!("no embedding for {token:?}; using zero vector");
                                vec![0.0; table.dim]
                            }
                            OovPolicy::Hashed { seed } => hashed_vector(
                                token,
                                &HashedConfig {
                                    dim: table.dim,
                                    seed,
                                },
                            ),
                        },
                    })
                    .collect();
                Ok(EmbeddingMatrix::new(rows, table.dim))
            }
            EmbeddingProvider::Contextual(store) => {
                let id = sentence.id().ok_or(EmbeddingError::MissingId)?;
                let rows = store
                    .entries
                    .get(id)
                    .ok_or_else(|| EmbeddingError::UnknownId { id: id.into() })?;
                if rows.len() != sentence.len() {
                    return Err(EmbeddingError::StoredLengthMismatch {
                        id: id.into(),
                        stored: rows.len(),
                        actual: sentence.len(),
                    });
                }
                Ok(EmbeddingMatrix::new(rows.clone(), store.dim))
            }
        }
    }
}
