//! Linear-chain CRF with collapsed transitions.
//!
//! Transition scores are not stored per concrete label pair. Instead a
//! 16-parameter table indexed by the abstract tags `{O, B, I}` and a
//! same-slot/different-slot distinction is expanded onto whatever label
//! vocabulary the current episode defines, so the learned transition
//! structure transfers across domains with disjoint label sets.
//!
//! All dynamic programming runs in log space with per-step max
//! subtraction.

#![allow(clippy::needless_range_loop)] // explicit indices keep the DP legible

use serde::{Deserialize, Serialize};

use crate::corpus::{AbstractTag, LabelVocab};

/// Slot relation between two non-O labels (`Na` when either side is O).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRel {
    Na,
    Same,
    Diff,
}

/// The collapsed transition table: 3 start scores plus 13 transition cells.
///
/// Valid transition cells are exactly `(O,O)`, `(O,B)`, `(O,I)`, `(B,O)`,
/// `(I,O)` with relation `Na`, and `(B,B)`, `(B,I)`, `(I,B)`, `(I,I)` with
/// relation `Same` or `Diff`. All parameters start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdtTable {
    pub start_o: f64,
    pub start_b: f64,
    pub start_i: f64,
    pub o_to_o: f64,
    pub o_to_b: f64,
    pub o_to_i: f64,
    pub b_to_o: f64,
    pub b_to_b_same: f64,
    pub b_to_b_diff: f64,
    pub b_to_i_same: f64,
    pub b_to_i_diff: f64,
    pub i_to_o: f64,
    pub i_to_b_same: f64,
    pub i_to_b_diff: f64,
    pub i_to_i_same: f64,
    pub i_to_i_diff: f64,
}

/// Number of trainable scalars in a [`CdtTable`].
pub const CDT_CELLS: usize = 16;

/// Stable names for the flattened cells, aligned with
/// [`CdtTable::get_flat`].
pub const CDT_CELL_NAMES: [&str; CDT_CELLS] = [
    "start_o",
    "start_b",
    "start_i",
    "o_to_o",
    "o_to_b",
    "o_to_i",
    "b_to_o",
    "b_to_b_same",
    "b_to_b_diff",
    "b_to_i_same",
    "b_to_i_diff",
    "i_to_o",
    "i_to_b_same",
    "i_to_b_diff",
    "i_to_i_same",
    "i_to_i_diff",
];

impl CdtTable {
    pub fn zeros() -> Self {
        Self {
            start_o: 0.0,
            start_b: 0.0,
            start_i: 0.0,
            o_to_o: 0.0,
            o_to_b: 0.0,
            o_to_i: 0.0,
            b_to_o: 0.0,
            b_to_b_same: 0.0,
            b_to_b_diff: 0.0,
            b_to_i_same: 0.0,
            b_to_i_diff: 0.0,
            i_to_o: 0.0,
            i_to_b_same: 0.0,
            i_to_b_diff: 0.0,
            i_to_i_same: 0.0,
            i_to_i_diff: 0.0,
        }
    }

    pub fn start(&self, tag: AbstractTag) -> f64 {
        match tag {
            AbstractTag::O => self.start_o,
            AbstractTag::B => self.start_b,
            AbstractTag::I => self.start_i,
        }
    }

    pub fn start_mut(&mut self, tag: AbstractTag) -> &mut f64 {
        match tag {
            AbstractTag::O => &mut self.start_o,
            AbstractTag::B => &mut self.start_b,
            AbstractTag::I => &mut self.start_i,
        }
    }

    pub fn trans(&self, prev: AbstractTag, next: AbstractTag, rel: SlotRel) -> f64 {
        use AbstractTag::{B, I, O};
        use SlotRel::{Diff, Na, Same};
        match (prev, next, rel) {
            (O, O, Na) => self.o_to_o,
            (O, B, Na) => self.o_to_b,
            (O, I, Na) => self.o_to_i,
            (B, O, Na) => self.b_to_o,
            (B, B, Same) => self.b_to_b_same,
            (B, B, Diff) => self.b_to_b_diff,
            (B, I, Same) => self.b_to_i_same,
            (B, I, Diff) => self.b_to_i_diff,
            (I, O, Na) => self.i_to_o,
            (I, B, Same) => self.i_to_b_same,
            (I, B, Diff) => self.i_to_b_diff,
            (I, I, Same) => self.i_to_i_same,
            (I, I, Diff) => self.i_to_i_diff,
            _ => panic!("invalid transition cell ({prev}, {next}, {rel:?})"),
        }
    }

    pub fn trans_mut(&mut self, prev: AbstractTag, next: AbstractTag, rel: SlotRel) -> &mut f64 {
        use AbstractTag::{B, I, O};
        use SlotRel::{Diff, Na, Same};
        match (prev, next, rel) {
            (O, O, Na) => &mut self.o_to_o,
            (O, B, Na) => &mut self.o_to_b,
            (O, I, Na) => &mut self.o_to_i,
            (B, O, Na) => &mut self.b_to_o,
            (B, B, Same) => &mut self.b_to_b_same,
            (B, B, Diff) => &mut self.b_to_b_diff,
            (B, I, Same) => &mut self.b_to_i_same,
            (B, I, Diff) => &mut self.b_to_i_diff,
            (I, O, Na) => &mut self.i_to_o,
            (I, B, Same) => &mut self.i_to_b_same,
            (I, B, Diff) => &mut self.i_to_b_diff,
            (I, I, Same) => &mut self.i_to_i_same,
            (I, I, Diff) => &mut self.i_to_i_diff,
            _ => panic!("invalid transition cell ({prev}, {next}, {rel:?})"),
        }
    }

    /// Flattened view in the order of [`CDT_CELL_NAMES`].
    pub fn get_flat(&self, idx: usize) -> f64 {
        match idx {
            0 => self.start_o,
            1 => self.start_b,
            2 => self.start_i,
            3 => self.o_to_o,
            4 => self.o_to_b,
            5 => self.o_to_i,
            6 => self.b_to_o,
            7 => self.b_to_b_same,
            8 => self.b_to_b_diff,
            9 => self.b_to_i_same,
            10 => self.b_to_i_diff,
            11 => self.i_to_o,
            12 => self.i_to_b_same,
            13 => self.i_to_b_diff,
            14 => self.i_to_i_same,
            15 => self.i_to_i_diff,
            _ => panic!("cdt cell index {idx} out of range"),
        }
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) {
        let cell = match idx {
            0 => &mut self.start_o,
            1 => &mut self.start_b,
            2 => &mut self.start_i,
            3 => &mut self.o_to_o,
            4 => &mut self.o_to_b,
            5 => &mut self.o_to_i,
            6 => &mut self.b_to_o,
            7 => &mut self.b_to_b_same,
            8 => &mut self.b_to_b_diff,
            9 => &mut self.b_to_i_same,
            10 => &mut self.b_to_i_diff,
            11 => &mut self.i_to_o,
            12 => &mut self.i_to_b_same,
            13 => &mut self.i_to_b_diff,
            14 => &mut self.i_to_i_same,
            15 => &mut self.i_to_i_diff,
            _ => panic!("cdt cell index {idx} out of range"),
        };
        *cell = value;
    }

    pub fn add_assign(&mut self, other: &CdtTable) {
        for i in 0..CDT_CELLS {
            self.set_flat(i, self.get_flat(i) + other.get_flat(i));
        }
    }
}

/// Which collapsed cell a concrete label pair maps to.
fn cell_of(vocab: &LabelVocab, prev: usize, next: usize) -> (AbstractTag, AbstractTag, SlotRel) {
    let pa = vocab.abstract_of(prev);
    let na = vocab.abstract_of(next);
    let rel = if pa == AbstractTag::O || na == AbstractTag::O {
        SlotRel::Na
    } else if vocab.slot_of(prev) == vocab.slot_of(next) {
        SlotRel::Same
    } else {
        SlotRel::Diff
    };
    (pa, na, rel)
}

/// Concrete start and transition scores over one label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedTransitions {
    start: Vec<f64>,
    trans: Vec<f64>, // row-major K x K
    k: usize,
}

impl ExpandedTransitions {
    /// Builds directly from concrete scores, mostly for tests and oracles.
    pub fn from_parts(start: Vec<f64>, trans: Vec<f64>, k: usize) -> Self {
        assert_eq!(start.len(), k);
        assert_eq!(trans.len(), k * k);
        Self { start, trans, k }
    }

    pub fn n_labels(&self) -> usize {
        self.k
    }

    pub fn start_score(&self, k: usize) -> f64 {
        self.start[k]
    }

    pub fn trans_score(&self, prev: usize, next: usize) -> f64 {
        self.trans[prev * self.k + next]
    }
}

/// Materializes the collapsed table onto a concrete vocabulary.
pub fn expand_transitions(cdt: &CdtTable, vocab: &LabelVocab) -> ExpandedTransitions {
    let k = vocab.len();
    let start = (0..k).map(|i| cdt.start(vocab.abstract_of(i))).collect();
    let mut trans = vec![0.0; k * k];
    for prev in 0..k {
        for next in 0..k {
            let (pa, na, rel) = cell_of(vocab, prev, next);
            trans[prev * k + next] = cdt.trans(pa, na, rel);
        }
    }
    ExpandedTransitions { start, trans, k }
}

/// Emission and transition scores for one sentence.
#[derive(Debug, Clone)]
pub struct Lattice {
    emissions: Vec<Vec<f64>>, // T x K
    transitions: ExpandedTransitions,
}

impl Lattice {
    pub fn new(emissions: Vec<Vec<f64>>, transitions: ExpandedTransitions) -> Self {
        assert!(!emissions.is_empty(), "lattice needs at least one position");
        for row in &emissions {
            assert_eq!(row.len(), transitions.k, "emission width != label count");
            assert!(row.iter().all(|x| x.is_finite()), "non-finite emission");
        }
        Self {
            emissions,
            transitions,
        }
    }

    pub fn n_positions(&self) -> usize {
        self.emissions.len()
    }

    pub fn n_labels(&self) -> usize {
        self.transitions.k
    }

    pub fn emission(&self, i: usize, k: usize) -> f64 {
        self.emissions[i][k]
    }

    pub fn transitions(&self) -> &ExpandedTransitions {
        &self.transitions
    }
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Total path score: start + transitions + emissions along `path`.
pub fn score_sequence(lat: &Lattice, path: &[usize]) -> f64 {
    assert_eq!(path.len(), lat.n_positions(), "path length != positions");
    let trans = &lat.transitions;
    // Accumulation order mirrors the forward recursion so that the K = 1
    // posterior NLL is exactly zero.
    let mut score = trans.start_score(path[0]) + lat.emission(0, path[0]);
    for i in 1..path.len() {
        score += trans.trans_score(path[i - 1], path[i]);
        score += lat.emission(i, path[i]);
    }
    score
}

fn forward(lat: &Lattice) -> Vec<Vec<f64>> {
    let (t, k) = (lat.n_positions(), lat.n_labels());
    let trans = &lat.transitions;
    let mut alpha = vec![vec![0.0; k]; t];
    for y in 0..k {
        alpha[0][y] = trans.start_score(y) + lat.emission(0, y);
    }
    let mut scratch = vec![0.0; k];
    for i in 1..t {
        for y in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = alpha[i - 1][j] + trans.trans_score(j, y);
            }
            alpha[i][y] = logsumexp(&scratch) + lat.emission(i, y);
        }
    }
    alpha
}

fn backward(lat: &Lattice) -> Vec<Vec<f64>> {
    let (t, k) = (lat.n_positions(), lat.n_labels());
    let trans = &lat.transitions;
    let mut beta = vec![vec![0.0; k]; t];
    let mut scratch = vec![0.0; k];
    for i in (0..t - 1).rev() {
        for y in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = trans.trans_score(y, j) + lat.emission(i + 1, j) + beta[i + 1][j];
            }
            beta[i][y] = logsumexp(&scratch);
        }
    }
    beta
}

/// Log of the sum of exponentiated scores over all label paths.
pub fn log_partition(lat: &Lattice) -> f64 {
    let alpha = forward(lat);
    logsumexp(alpha.last().expect("T >= 1"))
}

/// Negative log posterior of the given path; always non-negative.
pub fn posterior_nll(lat: &Lattice, path: &[usize]) -> f64 {
    log_partition(lat) - score_sequence(lat, path)
}

/// Highest-scoring path. Ties break toward the smallest label index at
/// every backtracking choice, so the result is reproducible bit for bit.
pub fn viterbi(lat: &Lattice) -> (Vec<usize>, f64) {
    let (t, k) = (lat.n_positions(), lat.n_labels());
    let trans = &lat.transitions;
    let mut delta = vec![vec![0.0; k]; t];
    let mut back = vec![vec![0usize; k]; t];
    for y in 0..k {
        delta[0][y] = trans.start_score(y) + lat.emission(0, y);
    }
    for i in 1..t {
        for y in 0..k {
            let mut best_j = 0;
            let mut best = delta[i - 1][0] + trans.trans_score(0, y);
            for j in 1..k {
                let candidate = delta[i - 1][j] + trans.trans_score(j, y);
                if candidate > best {
                    best = candidate;
                    best_j = j;
                }
            }
            delta[i][y] = best + lat.emission(i, y);
            back[i][y] = best_j;
        }
    }
    let mut last = 0;
    for y in 1..k {
        if delta[t - 1][y] > delta[t - 1][last] {
            last = y;
        }
    }
    let score = delta[t - 1][last];
    let mut path = vec![0usize; t];
    path[t - 1] = last;
    for i in (1..t).rev() {
        path[i - 1] = back[i][path[i]];
    }
    (path, score)
}

/// Node and edge posteriors from forward-backward.
#[derive(Debug, Clone)]
pub struct Marginals {
    /// `node[i][k] = P(y_i = k)`.
    pub node: Vec<Vec<f64>>,
    /// `edge[i][j][k] = P(y_i = j, y_{i+1} = k)`; empty when `T == 1`.
    pub edge: Vec<Vec<Vec<f64>>>,
}

pub fn marginals(lat: &Lattice) -> Marginals {
    let (t, k) = (lat.n_positions(), lat.n_labels());
    let trans = &lat.transitions;
    let alpha = forward(lat);
    let beta = backward(lat);
    let log_z = logsumexp(&alpha[t - 1]);

    let node = (0..t)
        .map(|i| {
            (0..k)
                .map(|y| (alpha[i][y] + beta[i][y] - log_z).exp())
                .collect()
        })
        .collect();
    let edge = (0..t - 1)
        .map(|i| {
            (0..k)
                .map(|j| {
                    (0..k)
                        .map(|y| {
                            (alpha[i][j]
                                + trans.trans_score(j, y)
                                + lat.emission(i + 1, y)
                                + beta[i + 1][y]
                                - log_z)
                                .exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Marginals { node, edge }
}

/// Gradient of the path NLL: expected minus observed counts, with the
/// transition part folded through the collapsed-cell tying.
///
/// Returns the per-emission gradient `node[i][k] - 1{y_i = k}` and the
/// accumulated collapsed-table gradient.
pub fn nll_gradients(lat: &Lattice, path: &[usize], vocab: &LabelVocab) -> (Vec<Vec<f64>>, CdtTable) {
    assert_eq!(path.len(), lat.n_positions());
    assert_eq!(vocab.len(), lat.n_labels());
    let (t, k) = (lat.n_positions(), lat.n_labels());
    let marg = marginals(lat);

    let mut d_emissions = marg.node.clone();
    for (i, &y) in path.iter().enumerate() {
        d_emissions[i][y] -= 1.0;
    }

    let mut d_cdt = CdtTable::zeros();
    for y in 0..k {
        let value = marg.node[0][y] - if path[0] == y { 1.0 } else { 0.0 };
        *d_cdt.start_mut(vocab.abstract_of(y)) += value;
    }
    for i in 0..t - 1 {
        for j in 0..k {
            for y in 0..k {
                let observed = if path[i] == j && path[i + 1] == y {
                    1.0
                } else {
                    0.0
                };
                let value = marg.edge[i][j][y] - observed;
                let (pa, na, rel) = cell_of(vocab, j, y);
                *d_cdt.trans_mut(pa, na, rel) += value;
            }
        }
    }
    (d_emissions, d_cdt)
}
