//! Span-level F1 scoring, episode-level averaging, and token-level error
//! typing.
//!
//! Precision and recall count exact `(slot, start, end)` span matches, with
//! spans extracted by the CoNLL-script rules in [`crate::corpus`]. Wrong
//! predictions split into three token-level types: `O-X` (spurious slot),
//! `X-O` (missed slot), and `X-X` (wrong slot tag), where `X` is any tag
//! beginning with `B` or `I`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_spans, TagSeq};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{pred} predicted sequences vs {gold} gold sequences")]
    SequenceCountMismatch { pred: usize, gold: usize },
    #[error("sentence {index}: predicted {pred} tags, gold has {gold}")]
    LengthMismatch {
        index: usize,
        pred: usize,
        gold: usize,
    },
    #[error("no episodes to evaluate")]
    Empty,
}

/// Per-episode decode results: `(predicted, gold)` tag sequences.
pub type EpisodeDecodes = Vec<(Vec<TagSeq>, Vec<TagSeq>)>;

/// Precision/recall/F1 over exact span matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl F1Report {
    /// Applies the 0/0 -> 0 convention throughout.
    pub fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let precision = if n_pred == 0 {
            0.0
        } else {
            tp as f64 / n_pred as f64
        };
        let recall = if n_gold == 0 {
            0.0
        } else {
            tp as f64 / n_gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            n_pred,
            n_gold,
        }
    }
}

fn span_counts(pred: &[TagSeq], gold: &[TagSeq]) -> Result<(usize, usize, usize), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::SequenceCountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut tp = 0;
    let mut n_pred = 0;
    let mut n_gold = 0;
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::LengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
        let pred_spans = extract_spans(p);
        let gold_spans: BTreeSet<_> = extract_spans(g).into_iter().collect();
        n_pred += pred_spans.len();
        n_gold += gold_spans.len();
        tp += pred_spans.iter().filter(|s| gold_spans.contains(s)).count();
    }
    Ok((tp, n_pred, n_gold))
}

/// Span F1 over parallel predicted and gold tag sequences.
pub fn span_f1(pred: &[TagSeq], gold: &[TagSeq]) -> Result<F1Report, EvalError> {
    let (tp, n_pred, n_gold) = span_counts(pred, gold)?;
    Ok(F1Report::from_counts(tp, n_pred, n_gold))
}

/// Per-episode F1 (pooled over each episode's sentences) and the arithmetic
/// mean across episodes.
pub fn episode_f1(
    results: &[(Vec<TagSeq>, Vec<TagSeq>)],
) -> Result<(Vec<F1Report>, f64), EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let reports: Vec<F1Report> = results
        .iter()
        .map(|(pred, gold)| span_f1(pred, gold))
        .collect::<Result<_, _>>()?;
    let mean = reports.iter().map(|r| r.f1).sum::<f64>() / reports.len() as f64;
    Ok((reports, mean))
}

/// Single F1 over all sentences of all episodes pooled together.
pub fn pooled_f1(results: &[(Vec<TagSeq>, Vec<TagSeq>)]) -> Result<F1Report, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tp = 0;
    let mut n_pred = 0;
    let mut n_gold = 0;
    for (pred, gold) in results {
        let (t, p, g) = span_counts(pred, gold)?;
        tp += t;
        n_pred += p;
        n_gold += g;
    }
    Ok(F1Report::from_counts(tp, n_pred, n_gold))
}

/// How episode results aggregate into a single score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// F1 per episode, then the arithmetic mean over episodes.
    #[default]
    Episode,
    /// One F1 over all sentences pooled across episodes.
    Pooled,
}

/// Token-level outcome counts: correct, spurious slot (`O-X`), missed slot
/// (`X-O`), and wrong slot tag (`X-X`). The four always sum to the token
/// count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub c: usize,
    pub ox: usize,
    pub xo: usize,
    pub xx: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.c + self.ox + self.xo + self.xx
    }

    pub fn add_assign(&mut self, other: &ErrorCounts) {
        self.c += other.c;
        self.ox += other.ox;
        self.xo += other.xo;
        self.xx += other.xx;
    }
}

/// Classifies each token of one sentence.
pub fn error_types(pred: &TagSeq, gold: &TagSeq) -> Result<ErrorCounts, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            index: 0,
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut counts = ErrorCounts::default();
    for (p, g) in pred.tags().iter().zip(gold.tags()) {
        match (g == "O", p == "O") {
            _ if p == g => counts.c += 1,
            (true, false) => counts.ox += 1,
            (false, true) => counts.xo += 1,
            (false, false) => counts.xx += 1,
            (true, true) => unreachable!("p == g already matched"),
        }
    }
    Ok(counts)
}

/// A small named-column table with TSV and aligned-Markdown renderers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: Vec<S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row<S: Into<String>>(&mut self, row: Vec<S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(row.len(), self.headers.len(), "row width != header width");
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.headers.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let render = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = render(&self.headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for row in &self.rows {
            out.push_str(&render(row));
        }
        out
    }
}
