//! Word-label similarity metrics.
//!
//! The projection family scores a word vector `x` against a label vector
//! `c` by the scalar projection `x·c/||c||`, optionally shifted by the
//! adaptive bias `-½||c||` that acts as a per-label threshold. The
//! remaining variants (dot product, reverse projection, cosine, negative
//! half squared Euclidean distance, scaled dot, dot-with-bias) exist for
//! contrastive experiments and for the algebraic identities relating them.
//!
//! Zero-norm convention: any term that would divide by a zero norm
//! evaluates to 0, so labels backed by an empty prototype are scoreable.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::embeddings::EmbeddingMatrix;
use crate::linalg::{axpy, dot, norm};
use crate::prototypes::Prototypes;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("label vector has zero norm")]
    ZeroNorm,
    #[error("unknown metric {0:?} (expected one of vp, vpb, dot, rproj, cosine, sqeuclid, scaled-dot, dot-bias)")]
    UnknownMetric(String),
}

/// The available word-label similarity functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    /// `x·c/||c||` — projection of the word vector onto the label direction.
    Vp,
    /// `x·c/||c|| - ½||c||` — projection with the adaptive bias.
    Vpb,
    /// `x·c`.
    Dot,
    /// `(x/||x||)·c` — projection of the label vector onto the word direction.
    ReverseProjection,
    /// `x·c/(||x||·||c||)`.
    Cosine,
    /// `-½||x - c||²`.
    SqEuclid,
    /// `λ·(x·c)` with a trainable scale.
    ScaledDot { lambda: f64 },
    /// `x·c - ½c·c` — the label-dependent part of `SqEuclid`.
    DotBias,
}

impl MetricKind {
    /// All metrics, with trainable scales at their initial values.
    pub fn all() -> [MetricKind; 8] {
        [
            MetricKind::Vp,
            MetricKind::Vpb,
            MetricKind::Dot,
            MetricKind::ReverseProjection,
            MetricKind::Cosine,
            MetricKind::SqEuclid,
            MetricKind::ScaledDot { lambda: 1.0 },
            MetricKind::DotBias,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Vp => "vp",
            MetricKind::Vpb => "vpb",
            MetricKind::Dot => "dot",
            MetricKind::ReverseProjection => "rproj",
            MetricKind::Cosine => "cosine",
            MetricKind::SqEuclid => "sqeuclid",
            MetricKind::ScaledDot { .. } => "scaled-dot",
            MetricKind::DotBias => "dot-bias",
        }
    }

    /// The trainable scale, present only for `scaled-dot`.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            MetricKind::ScaledDot { lambda } => Some(*lambda),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = SimilarityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vp" => Ok(MetricKind::Vp),
            "vpb" => Ok(MetricKind::Vpb),
            "dot" => Ok(MetricKind::Dot),
            "rproj" => Ok(MetricKind::ReverseProjection),
            "cosine" => Ok(MetricKind::Cosine),
            "sqeuclid" => Ok(MetricKind::SqEuclid),
            "scaled-dot" => Ok(MetricKind::ScaledDot { lambda: 1.0 }),
            "dot-bias" => Ok(MetricKind::DotBias),
            other => Err(SimilarityError::UnknownMetric(other.into())),
        }
    }
}

/// Scores one word vector against one label vector.
///
/// Panics if the vectors have different lengths.
pub fn sim(x: &[f64], c: &[f64], metric: MetricKind) -> f64 {
    assert_eq!(x.len(), c.len(), "sim: dimension mismatch");
    match metric {
        MetricKind::Vp => {
            let n = norm(c);
            if n == 0.0 {
                0.0
            } else {
                dot(x, c) / n
            }
        }
        MetricKind::Vpb => {
            let n = norm(c);
            if n == 0.0 {
                0.0
            } else {
                dot(x, c) / n - 0.5 * n
            }
        }
        MetricKind::Dot => dot(x, c),
        MetricKind::ReverseProjection => {
            let n = norm(x);
            if n == 0.0 {
                0.0
            } else {
                dot(x, c) / n
            }
        }
        MetricKind::Cosine => {
            let nx = norm(x);
            let nc = norm(c);
            if nx == 0.0 || nc == 0.0 {
                0.0
            } else {
                dot(x, c) / (nx * nc)
            }
        }
        MetricKind::SqEuclid => {
            -0.5 * x
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
        MetricKind::ScaledDot { lambda } => lambda * dot(x, c),
        MetricKind::DotBias => dot(x, c) - 0.5 * dot(c, c),
    }
}

/// Partial derivatives of [`sim`] with respect to its inputs.
///
/// At zero-norm points the similarity is the constant 0 by convention and
/// the gradients are reported as zero.
#[derive(Debug, Clone)]
pub struct SimGrad {
    pub dx: Vec<f64>,
    pub dc: Vec<f64>,
    /// Derivative with respect to the trainable scale; 0 for other metrics.
    pub dlambda: f64,
}

pub fn sim_grad(x: &[f64], c: &[f64], metric: MetricKind) -> SimGrad {
    assert_eq!(x.len(), c.len(), "sim_grad: dimension mismatch");
    let d = x.len();
    let zeros = || vec![0.0; d];
    match metric {
        MetricKind::Vp | MetricKind::Vpb => {
            let n = norm(c);
            if n == 0.0 {
                return SimGrad {
                    dx: zeros(),
                    dc: zeros(),
                    dlambda: 0.0,
                };
            }
            let xc = dot(x, c);
            let dx: Vec<f64> = c.iter().map(|ci| ci / n).collect();
            let mut dc: Vec<f64> = x
                .iter()
                .zip(c)
                .map(|(xi, ci)| xi / n - xc * ci / (n * n * n))
                .collect();
            if metric == MetricKind::Vpb {
                axpy(-0.5 / n, c, &mut dc);
            }
            SimGrad {
                dx,
                dc,
                dlambda: 0.0,
            }
        }
        MetricKind::Dot => SimGrad {
            dx: c.to_vec(),
            dc: x.to_vec(),
            dlambda: 0.0,
        },
        MetricKind::ReverseProjection => {
            let n = norm(x);
            if n == 0.0 {
                return SimGrad {
                    dx: zeros(),
                    dc: zeros(),
                    dlambda: 0.0,
                };
            }
            let xc = dot(x, c);
            SimGrad {
                dx: x
                    .iter()
                    .zip(c)
                    .map(|(xi, ci)| ci / n - xc * xi / (n * n * n))
                    .collect(),
                dc: x.iter().map(|xi| xi / n).collect(),
                dlambda: 0.0,
            }
        }
        MetricKind::Cosine => {
            let nx = norm(x);
            let nc = norm(c);
            if nx == 0.0 || nc == 0.0 {
                return SimGrad {
                    dx: zeros(),
                    dc: zeros(),
                    dlambda: 0.0,
                };
            }
            let xc = dot(x, c);
            SimGrad {
                dx: x
                    .iter()
                    .zip(c)
                    .map(|(xi, ci)| ci / (nx * nc) - xc * xi / (nx * nx * nx * nc))
                    .collect(),
                dc: x
                    .iter()
                    .zip(c)
                    .map(|(xi, ci)| xi / (nx * nc) - xc * ci / (nx * nc * nc * nc))
                    .collect(),
                dlambda: 0.0,
            }
        }
        MetricKind::SqEuclid => SimGrad {
            dx: x.iter().zip(c).map(|(xi, ci)| ci - xi).collect(),
            dc: x.iter().zip(c).map(|(xi, ci)| xi - ci).collect(),
            dlambda: 0.0,
        },
        MetricKind::ScaledDot { lambda } => SimGrad {
            dx: c.iter().map(|ci| lambda * ci).collect(),
            dc: x.iter().map(|xi| lambda * xi).collect(),
            dlambda: dot(x, c),
        },
        MetricKind::DotBias => SimGrad {
            dx: c.to_vec(),
            dc: x.iter().zip(c).map(|(xi, ci)| xi - ci).collect(),
            dlambda: 0.0,
        },
    }
}

/// Scores every token of a sentence against every label prototype.
/// Entry `(i, k)` is `sim(rows[i], prototype_k, metric)`.
pub fn emission_scores(m: &EmbeddingMatrix, p: &Prototypes, metric: MetricKind) -> Vec<Vec<f64>> {
    assert_eq!(m.dim(), p.dim(), "emission_scores: dimension mismatch");
    m.rows()
        .iter()
        .map(|row| {
            (0..p.len())
                .map(|k| sim(row, p.vector(k), metric))
                .collect()
        })
        .collect()
}

/// The projection-with-bias metric rewritten as a linear classifier: unit
/// weight `c/||c||` and bias `-½||c||`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLinearView {
    pub weight: Vec<f64>,
    pub bias: f64,
}

pub fn normalized_linear_view(c: &[f64]) -> Result<NormalizedLinearView, SimilarityError> {
    let n = norm(c);
    if n == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok(NormalizedLinearView {
        weight: c.iter().map(|ci| ci / n).collect(),
        bias: -0.5 * n,
    })
}
