//! Per-label prototype vectors extracted from a support set.
//!
//! A label's prototype is the mean of the embeddings of all support tokens
//! carrying that label, optionally after a trainable linear head. Labels
//! that never occur in the support set (synthesized B-/I- partners) get the
//! zero vector and a zero count; the similarity module's zero-norm
//! convention keeps them scoreable.

use thiserror::Error;

use crate::corpus::{LabelVocab, SupportSet};
use crate::embeddings::{EmbeddingError, EmbeddingMatrix, EmbeddingProvider};
use crate::linalg::dot;

#[derive(Debug, Error)]
pub enum PrototypeError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("head expects input dimension {expected}, embeddings have {got}")]
    HeadDimMismatch { expected: usize, got: usize },
    #[error("support tag {tag:?} missing from the label vocabulary")]
    UnknownTag { tag: String },
}

/// A dense linear map applied to every embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    matrix: Vec<Vec<f64>>,
}

impl LinearHead {
    pub fn new(matrix: Vec<Vec<f64>>) -> Self {
        assert!(!matrix.is_empty(), "head matrix needs at least one row");
        let d_in = matrix[0].len();
        assert!(d_in > 0, "head matrix needs at least one column");
        for row in &matrix {
            assert_eq!(row.len(), d_in, "head matrix must be rectangular");
            assert!(row.iter().all(|x| x.is_finite()), "non-finite head entry");
        }
        Self { matrix }
    }

    pub fn identity(dim: usize) -> Self {
        let matrix = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(matrix)
    }

    pub fn d_out(&self) -> usize {
        self.matrix.len()
    }

    pub fn d_in(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.matrix
    }

    pub(crate) fn project(&self, row: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|r| dot(r, row)).collect()
    }
}

/// One vector and one token count per label, aligned with the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    vocab: LabelVocab,
    vectors: Vec<Vec<f64>>,
    counts: Vec<usize>,
    dim: usize,
}

impl Prototypes {
    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn count(&self, k: usize) -> usize {
        self.counts[k]
    }

    /// Labels with no supporting tokens carry the zero vector.
    pub fn is_unseen(&self, k: usize) -> bool {
        self.counts[k] == 0
    }
}

/// Applies the head to every row of an embedding matrix.
pub fn apply_head(head: &LinearHead, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, PrototypeError> {
    if head.d_in() != m.dim() {
        return Err(PrototypeError::HeadDimMismatch {
            expected: head.d_in(),
            got: m.dim(),
        });
    }
    Ok(EmbeddingMatrix::new(
        m.rows().iter().map(|row| head.project(row)).collect(),
        head.d_out(),
    ))
}

/// Per-label mean vectors and token counts over pre-embedded support
/// sentences. `matrices[i]` must align with `support.items()[i]`.
pub(crate) fn label_means(
    matrices: &[EmbeddingMatrix],
    support: &SupportSet,
    vocab: &LabelVocab,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), PrototypeError> {
    let dim = matrices[0].dim();
    let mut sums = vec![vec![0.0; dim]; vocab.len()];
    let mut counts = vec![0usize; vocab.len()];
    for (item, matrix) in support.items().iter().zip(matrices) {
        for (i, tag) in item.tags().tags().iter().enumerate() {
            let k = vocab
                .index_of(tag)
                .ok_or_else(|| PrototypeError::UnknownTag { tag: tag.clone() })?;
            counts[k] += 1;
            for (s, x) in sums[k].iter_mut().zip(matrix.row(i)) {
                *s += x;
            }
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            for s in sum.iter_mut() {
                *s /= count as f64;
            }
        }
    }
    Ok((sums, counts))
}

/// Extracts per-label prototypes from a support set.
pub fn compute_prototypes(
    support: &SupportSet,
    provider: &EmbeddingProvider,
    vocab: &LabelVocab,
    head: Option<&LinearHead>,
) -> Result<Prototypes, PrototypeError> {
    let mut matrices = Vec::with_capacity(support.len());
    for item in support.items() {
        let raw = provider.embed_sentence(item.sentence())?;
        let projected = match head {
            Some(h) => apply_head(h, &raw)?,
            None => raw,
        };
        matrices.push(projected);
    }
    let dim = matrices[0].dim();
    let (vectors, counts) = label_means(&matrices, support, vocab)?;
    for (k, count) in counts.iter().enumerate() {
        if *count == 0 {
            log::warn!(
                "label {:?} has no supporting tokens; prototype is the zero vector",
                vocab.label(k)
            );
        }
    }
    Ok(Prototypes {
        vocab: vocab.clone(),
        vectors,
        counts,
        dim,
    })
}
