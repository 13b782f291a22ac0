//! Episodic training, Adam optimization, support-set fine-tuning, and
//! checkpoints.
//!
//! One episode is one optimizer step: the loss is the posterior NLL summed
//! over the episode's query sentences, with gradients flowing into the
//! collapsed transition table directly and into the optional linear head
//! and metric scale through the emission scores. The head gradient has two
//! routes per score: through the query token embedding and through the
//! prototype, since prototypes are means of head-projected support
//! embeddings.
//!
//! Transition parameters get their own (large) learning rate; everything
//! else shares a second rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_label_vocab, CorpusError, DomainFile, Episode, TagSeq};
use crate::crf::{
    expand_transitions, nll_gradients, posterior_nll, viterbi, CdtTable, Lattice, CDT_CELLS,
};
use crate::embeddings::{EmbeddingError, EmbeddingMatrix, EmbeddingProvider, ProviderDescriptor};
use crate::evaluation::{episode_f1, pooled_f1, Averaging, EpisodeDecodes, EvalError, F1Report};
use crate::linalg::matvec;
use crate::prototypes::{apply_head, compute_prototypes, label_means, LinearHead, PrototypeError};
use crate::rng::{derive_seed, SplitMix64};
use crate::similarity::{emission_scores, sim, sim_grad, MetricKind, SimilarityError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Prototype(#[from] PrototypeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("no source episodes to train on")]
    EmptySources,
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed checkpoint JSON: {0}")]
    CheckpointJson(#[from] serde_json::Error),
}

/// Everything trainable: the collapsed transition table, the optional
/// linear head, and the metric's optional scale (carried inside `metric`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub metric: MetricKind,
    pub cdt: CdtTable,
    pub head: Option<LinearHead>,
}

impl ModelParams {
    /// Zero transition table; identity head when a head dimension is given.
    pub fn new(metric: MetricKind, head_dim: Option<usize>) -> Self {
        Self {
            metric,
            cdt: CdtTable::zeros(),
            head: head_dim.map(LinearHead::identity),
        }
    }

    /// The trainable metric scale, present only for `scaled-dot`.
    pub fn lambda(&self) -> Option<f64> {
        self.metric.lambda()
    }

    fn set_lambda(&mut self, value: f64) {
        if let MetricKind::ScaledDot { lambda } = &mut self.metric {
            *lambda = value;
        }
    }

    fn n_trainable(&self) -> usize {
        let head = self.head.as_ref().map_or(0, |h| h.d_out() * h.d_in());
        CDT_CELLS + head + usize::from(self.lambda().is_some())
    }

    fn get_param(&self, idx: usize) -> f64 {
        if idx < CDT_CELLS {
            return self.cdt.get_flat(idx);
        }
        let mut idx = idx - CDT_CELLS;
        if let Some(head) = &self.head {
            let n = head.d_out() * head.d_in();
            if idx < n {
                return head.matrix()[idx / head.d_in()][idx % head.d_in()];
            }
            idx -= n;
        }
        debug_assert_eq!(idx, 0);
        self.lambda().expect("index beyond head implies lambda")
    }

    fn set_param(&mut self, idx: usize, value: f64) {
        if idx < CDT_CELLS {
            self.cdt.set_flat(idx, value);
            return;
        }
        let mut idx = idx - CDT_CELLS;
        if let Some(head) = &mut self.head {
            let n = head.d_out() * head.d_in();
            if idx < n {
                let d_in = head.d_in();
                head.matrix_mut()[idx / d_in][idx % d_in] = value;
                return;
            }
            idx -= n;
        }
        debug_assert_eq!(idx, 0);
        self.set_lambda(value);
    }
}

/// Gradients with the same shape as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub cdt: CdtTable,
    pub head: Option<Vec<Vec<f64>>>,
    pub lambda: Option<f64>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            cdt: CdtTable::zeros(),
            head: params
                .head
                .as_ref()
                .map(|h| vec![vec![0.0; h.d_in()]; h.d_out()]),
            lambda: params.lambda().map(|_| 0.0),
        }
    }

    fn get(&self, idx: usize) -> f64 {
        if idx < CDT_CELLS {
            return self.cdt.get_flat(idx);
        }
        let mut idx = idx - CDT_CELLS;
        if let Some(head) = &self.head {
            let d_in = head[0].len();
            let n = head.len() * d_in;
            if idx < n {
                return head[idx / d_in][idx % d_in];
            }
            idx -= n;
        }
        debug_assert_eq!(idx, 0);
        self.lambda.expect("index beyond head implies lambda")
    }
}

/// Which checkpoint `train` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Parameters with the best validation F1 across passes.
    BestValidation,
    /// Parameters after the final pass.
    Final,
}

fn default_lr_transitions() -> f64 {
    1e-3
}

fn default_lr_other() -> f64 {
    1e-5
}

fn default_iterations() -> usize {
    5
}

fn default_selection() -> Selection {
    Selection::BestValidation
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate for the collapsed transition table.
    #[serde(default = "default_lr_transitions")]
    pub lr_transitions: f64,
    /// Learning rate for the head and the metric scale.
    #[serde(default = "default_lr_other")]
    pub lr_other: f64,
    /// Passes over the training episodes.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selection")]
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_transitions: default_lr_transitions(),
            lr_other: default_lr_other(),
            iterations: default_iterations(),
            seed: 0,
            selection: default_selection(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators, one pair per trainable scalar.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Transition cells use
/// `lr_transitions`; head entries and the metric scale use `lr_other`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    let n = params.n_trainable();
    if state.m.is_empty() {
        state.m = vec![0.0; n];
        state.v = vec![0.0; n];
    }
    assert_eq!(state.m.len(), n, "optimizer state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for idx in 0..n {
        let g = grads.get(idx);
        let m = &mut state.m[idx];
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        let v = &mut state.v[idx];
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        let lr = if idx < CDT_CELLS {
            cfg.lr_transitions
        } else {
            cfg.lr_other
        };
        let current = params.get_param(idx);
        params.set_param(idx, current - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
    }
}

/// Embeds a sentence and optionally projects it through the head. The raw
/// matrix is kept alongside when a head is applied.
fn embed_projected(
    provider: &EmbeddingProvider,
    head: Option<&LinearHead>,
    sentence: &crate::corpus::Sentence,
) -> Result<(EmbeddingMatrix, Option<EmbeddingMatrix>), TrainError> {
    let raw = provider.embed_sentence(sentence)?;
    match head {
        Some(h) => {
            let projected = apply_head(h, &raw)?;
            Ok((projected, Some(raw)))
        }
        None => Ok((raw, None)),
    }
}

/// Loss and gradients for one episode: posterior NLL summed over the query
/// batch. Query sentences whose gold tags fall outside the support-derived
/// vocabulary do not contribute (a warning is logged).
pub fn episode_nll(
    params: &ModelParams,
    episode: &Episode,
    provider: &EmbeddingProvider,
) -> Result<(f64, ModelGrads), TrainError> {
    let vocab = build_label_vocab(&episode.support);
    let k = vocab.len();

    // Raw per-label means over the support; prototypes are their head
    // projections, so the head gradient can flow through the means.
    let mut raw_support = Vec::with_capacity(episode.support.len());
    for item in episode.support.items() {
        raw_support.push(provider.embed_sentence(item.sentence())?);
    }
    let (raw_means, _counts) = label_means(&raw_support, &episode.support, &vocab)?;
    let prototypes: Vec<Vec<f64>> = match &params.head {
        Some(head) => {
            if head.d_in() != provider.dim() {
                return Err(PrototypeError::HeadDimMismatch {
                    expected: head.d_in(),
                    got: provider.dim(),
                }
                .into());
            }
            raw_means.iter().map(|v| matvec(head.matrix(), v)).collect()
        }
        None => raw_means.clone(),
    };

    let expanded = expand_transitions(&params.cdt, &vocab);
    let mut loss = 0.0;
    let mut grads = ModelGrads::zeros_like(params);
    let needs_emission_grads = grads.head.is_some() || grads.lambda.is_some();
    // Prototype-side contributions, folded into the head gradient at the end.
    let mut proto_bar = vec![vec![0.0; prototypes[0].len()]; k];

    for item in &episode.query {
        let path: Option<Vec<usize>> = item
            .tags()
            .tags()
            .iter()
            .map(|t| vocab.index_of(t))
            .collect();
        let Some(path) = path else {
            log::warn!("query sentence uses tags outside the support vocabulary; skipped");
            continue;
        };

        let (x, raw) = embed_projected(provider, params.head.as_ref(), item.sentence())?;
        let emissions: Vec<Vec<f64>> = x
            .rows()
            .iter()
            .map(|row| {
                (0..k)
                    .map(|y| sim(row, &prototypes[y], params.metric))
                    .collect()
            })
            .collect();
        let lattice = Lattice::new(emissions, expanded.clone());
        loss += posterior_nll(&lattice, &path);
        let (d_emissions, d_cdt) = nll_gradients(&lattice, &path, &vocab);
        grads.cdt.add_assign(&d_cdt);

        if needs_emission_grads {
            for (i, row) in d_emissions.iter().enumerate() {
                let x_i = x.row(i);
                for (y, &g) in row.iter().enumerate() {
                    let sg = sim_grad(x_i, &prototypes[y], params.metric);
                    if let Some(lambda) = &mut grads.lambda {
                        *lambda += g * sg.dlambda;
                    }
                    if let Some(d_head) = grads.head.as_mut() {
                        // Token route: dL/dM += g * (ds/dx) u_i^T.
                        let u_i = raw.as_ref().expect("raw kept when head is on").row(i);
                        for (r, dxr) in sg.dx.iter().enumerate() {
                            let coeff = g * dxr;
                            if coeff != 0.0 {
                                for (cell, u) in d_head[r].iter_mut().zip(u_i) {
                                    *cell += coeff * u;
                                }
                            }
                        }
                        // Prototype route accumulates per label.
                        for (b, dcr) in proto_bar[y].iter_mut().zip(&sg.dc) {
                            *b += g * dcr;
                        }
                    }
                }
            }
        }
    }

    if let Some(d_head) = grads.head.as_mut() {
        // dL/dM += sum_k proto_bar_k v_k^T over the raw means.
        for (bar, v) in proto_bar.iter().zip(&raw_means) {
            for (r, b) in bar.iter().enumerate() {
                if *b != 0.0 {
                    for (cell, vi) in d_head[r].iter_mut().zip(v) {
                        *cell += b * vi;
                    }
                }
            }
        }
    }

    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((loss, grads))
}

/// Per-pass training history entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub pass: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
}

/// Trains on all source episodes, one Adam step per episode, shuffling the
/// episode order each pass with a seed-derived permutation. Returns the
/// selected checkpoint (best validation F1 by default) and the per-pass
/// history.
pub fn train(
    initial: &ModelParams,
    sources: &[DomainFile],
    validation: &DomainFile,
    provider: &EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<PassStats>), TrainError> {
    let episodes: Vec<&Episode> = sources.iter().flat_map(|f| &f.episodes).collect();
    if episodes.is_empty() {
        return Err(TrainError::EmptySources);
    }

    let mut params = initial.clone();
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;

    for pass in 1..=cfg.iterations {
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        SplitMix64::new(derive_seed(cfg.seed, pass as u64)).shuffle(&mut order);

        let mut total_loss = 0.0;
        for &idx in &order {
            let (loss, grads) = episode_nll(&params, episodes[idx], provider)?;
            adam_step(&mut params, &grads, &mut state, cfg);
            total_loss += loss;
        }

        let (_, val_f1) = evaluate_on_domain(&params, validation, provider, Averaging::Episode)?;
        history.push(PassStats {
            pass,
            mean_loss: total_loss / episodes.len() as f64,
            val_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best = params.clone();
        }
    }

    let selected = match cfg.selection {
        Selection::BestValidation if cfg.iterations > 0 => best,
        _ => params,
    };
    Ok((selected, history))
}

/// Runs `steps` Adam updates of the support-set NLL, with the support
/// doubling as its own query batch. The input parameters are never mutated;
/// callers evaluating many episodes restore the pre-trained state simply by
/// reusing them.
pub fn finetune_on_support(
    params: &ModelParams,
    episode: &Episode,
    provider: &EmbeddingProvider,
    steps: usize,
    cfg: &TrainConfig,
) -> Result<ModelParams, TrainError> {
    let mut tuned = params.clone();
    if steps == 0 {
        return Ok(tuned);
    }
    let self_episode = Episode {
        support: episode.support.clone(),
        query: episode.support.items().to_vec(),
    };
    let mut state = AdamState::new();
    for _ in 0..steps {
        let (_, grads) = episode_nll(&tuned, &self_episode, provider)?;
        adam_step(&mut tuned, &grads, &mut state, cfg);
    }
    Ok(tuned)
}

/// Viterbi-decodes every query sentence of an episode.
pub fn decode_episode(
    params: &ModelParams,
    episode: &Episode,
    provider: &EmbeddingProvider,
) -> Result<Vec<TagSeq>, TrainError> {
    let vocab = build_label_vocab(&episode.support);
    let prototypes = compute_prototypes(&episode.support, provider, &vocab, params.head.as_ref())?;
    let expanded = expand_transitions(&params.cdt, &vocab);
    let mut out = Vec::with_capacity(episode.query.len());
    for item in &episode.query {
        let (x, _) = embed_projected(provider, params.head.as_ref(), item.sentence())?;
        let emissions = emission_scores(&x, &prototypes, params.metric);
        let lattice = Lattice::new(emissions, expanded.clone());
        let (path, _) = viterbi(&lattice);
        let tags: Vec<String> = path.iter().map(|&y| vocab.label(y).to_string()).collect();
        out.push(TagSeq::new(tags).expect("vocabulary labels are valid tags"));
    }
    Ok(out)
}

/// Decodes every episode of a domain file, optionally fine-tuning on each
/// support set first (the base parameters are reused between episodes).
/// Returns per-episode `(predicted, gold)` tag sequences.
pub fn decode_domain(
    params: &ModelParams,
    file: &DomainFile,
    provider: &EmbeddingProvider,
    finetune: Option<(usize, &TrainConfig)>,
) -> Result<EpisodeDecodes, TrainError> {
    let mut results = Vec::with_capacity(file.episodes.len());
    for episode in &file.episodes {
        let pred = match finetune {
            Some((steps, cfg)) if steps > 0 => {
                let tuned = finetune_on_support(params, episode, provider, steps, cfg)?;
                decode_episode(&tuned, episode, provider)?
            }
            _ => decode_episode(params, episode, provider)?,
        };
        let gold = episode.query.iter().map(|q| q.tags().clone()).collect();
        results.push((pred, gold));
    }
    Ok(results)
}

/// Decodes and scores a domain file. Returns per-episode reports and the
/// aggregate F1 under the requested averaging.
pub fn evaluate_on_domain(
    params: &ModelParams,
    file: &DomainFile,
    provider: &EmbeddingProvider,
    averaging: Averaging,
) -> Result<(Vec<F1Report>, f64), TrainError> {
    let results = decode_domain(params, file, provider, None)?;
    aggregate(&results, averaging)
}

/// Like [`evaluate_on_domain`], with per-episode support fine-tuning first.
pub fn evaluate_with_finetune(
    params: &ModelParams,
    file: &DomainFile,
    provider: &EmbeddingProvider,
    steps: usize,
    cfg: &TrainConfig,
    averaging: Averaging,
) -> Result<(Vec<F1Report>, f64), TrainError> {
    let results = decode_domain(params, file, provider, Some((steps, cfg)))?;
    aggregate(&results, averaging)
}

fn aggregate(
    results: &[(Vec<TagSeq>, Vec<TagSeq>)],
    averaging: Averaging,
) -> Result<(Vec<F1Report>, f64), TrainError> {
    let (reports, mean) = episode_f1(results)?;
    match averaging {
        Averaging::Episode => Ok((reports, mean)),
        Averaging::Pooled => {
            let pooled = pooled_f1(results)?;
            Ok((reports, pooled.f1))
        }
    }
}

/// Serializable snapshot of trained parameters plus enough context to
/// rebuild the model: metric name, named transition cells, optional head
/// matrix, optional metric scale, the embedding-provider descriptor, and
/// the training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub cdt: CdtTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Vec<Vec<f64>>>,
    pub embeddings: ProviderDescriptor,
    pub train: TrainConfig,
}

impl Checkpoint {
    pub fn from_params(
        params: &ModelParams,
        embeddings: ProviderDescriptor,
        train: TrainConfig,
    ) -> Self {
        Self {
            metric: params.metric.name().to_string(),
            lambda: params.lambda(),
            cdt: params.cdt,
            head: params.head.as_ref().map(|h| h.matrix().to_vec()),
            embeddings,
            train,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, TrainError> {
        let mut metric: MetricKind = self
            .metric
            .parse()
            .map_err(|e: SimilarityError| TrainError::Checkpoint(e.to_string()))?;
        match (&mut metric, self.lambda) {
            (MetricKind::ScaledDot { lambda }, Some(value)) => *lambda = value,
            (MetricKind::ScaledDot { .. }, None) => {
                return Err(TrainError::Checkpoint(
                    "scaled-dot checkpoint is missing lambda".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(TrainError::Checkpoint(format!(
                    "metric {} does not take lambda",
                    self.metric
                )))
            }
            (_, None) => {}
        }
        Ok(ModelParams {
            metric,
            cdt: self.cdt,
            head: self.head.clone().map(LinearHead::new),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, Sentence, SupportSet};
    use crate::embeddings::HashedConfig;

    fn labeled(tokens: &[&str], tags: &[&str]) -> LabeledSentence {
        let sentence =
            Sentence::new(None, tokens.iter().map(|s| s.to_string()).collect()).unwrap();
        let tags = TagSeq::new(tags.iter().map(|s| s.to_string()).collect()).unwrap();
        LabeledSentence::new(sentence, tags).unwrap()
    }

    fn toy_episode() -> Episode {
        let support = SupportSet::new(vec![
            labeled(&["find", "paris", "hotels"], &["O", "B-city", "O"]),
            labeled(
                &["visit", "tokyo", "in", "may"],
                &["O", "B-city", "O", "B-month"],
            ),
        ])
        .unwrap();
        Episode {
            support,
            query: vec![
                labeled(&["paris", "in", "may"], &["B-city", "O", "B-month"]),
                labeled(&["tokyo", "hotels"], &["B-city", "O"]),
            ],
        }
    }

    fn provider() -> EmbeddingProvider {
        EmbeddingProvider::Hashed(HashedConfig { dim: 5, seed: 77 })
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradient() {
        let mut params = ModelParams::new(MetricKind::Vp, None);
        let grads = ModelGrads::zeros_like(&params);
        let mut state = AdamState::new();
        let before = params.clone();
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut params = ModelParams::new(MetricKind::Vp, None);
        let mut grads = ModelGrads::zeros_like(&params);
        grads.cdt.start_b = 2.5; // arbitrary positive gradient
        let mut state = AdamState::new();
        let cfg = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg);
        // Bias-corrected first step moves by about -lr * sign(g).
        let displacement = params.cdt.start_b;
        assert!(
            (displacement + cfg.lr_transitions).abs() < 1e-6,
            "{displacement}"
        );
    }

    #[test]
    fn adam_applies_per_group_learning_rates() {
        let mut params = ModelParams::new(MetricKind::Vp, Some(2));
        let mut grads = ModelGrads::zeros_like(&params);
        grads.cdt.o_to_b = 1.0;
        grads.head.as_mut().unwrap()[0][0] = 1.0;
        let mut state = AdamState::new();
        let cfg = TrainConfig {
            lr_transitions: 1e-2,
            lr_other: 1e-4,
            ..TrainConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg);
        assert!((params.cdt.o_to_b + 1e-2).abs() < 1e-8);
        let head_entry = params.head.as_ref().unwrap().matrix()[0][0];
        assert!((head_entry - (1.0 - 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn episode_loss_is_finite_and_positive() {
        let (loss, _) = episode_nll(
            &ModelParams::new(MetricKind::Vp, None),
            &toy_episode(),
            &provider(),
        )
        .unwrap();
        assert!(loss.is_finite());
        assert!(loss > 0.0);
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let params = ModelParams::new(MetricKind::Vpb, None);
        let tuned = finetune_on_support(
            &params,
            &toy_episode(),
            &provider(),
            0,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(params, tuned);
    }

    #[test]
    fn finetune_does_not_mutate_input() {
        let params = ModelParams::new(MetricKind::Vp, None);
        let before = params.clone();
        let _ = finetune_on_support(
            &params,
            &toy_episode(),
            &provider(),
            5,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn finetune_reduces_support_nll() {
        let episode = toy_episode();
        let provider = provider();
        let params = ModelParams::new(MetricKind::Vp, None);
        let self_episode = Episode {
            support: episode.support.clone(),
            query: episode.support.items().to_vec(),
        };
        let (before, _) = episode_nll(&params, &self_episode, &provider).unwrap();
        let tuned =
            finetune_on_support(&params, &episode, &provider, 10, &TrainConfig::default())
                .unwrap();
        let (after, _) = episode_nll(&tuned, &self_episode, &provider).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn training_history_is_deterministic() {
        let episode = toy_episode();
        let file = DomainFile::new("d".into(), vec![episode.clone(), episode]).unwrap();
        let params = ModelParams::new(MetricKind::Vp, None);
        let cfg = TrainConfig {
            iterations: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || train(&params, std::slice::from_ref(&file), &file, &provider(), &cfg).unwrap();
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn zero_iterations_returns_initial_params() {
        let episode = toy_episode();
        let file = DomainFile::new("d".into(), vec![episode]).unwrap();
        let params = ModelParams::new(MetricKind::Dot, None);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let (out, history) = train(&params, std::slice::from_ref(&file), &file, &provider(), &cfg).unwrap();
        assert_eq!(out, params);
        assert!(history.is_empty());
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut params = ModelParams::new(MetricKind::ScaledDot { lambda: 1.25 }, Some(3));
        params.cdt.b_to_i_same = 0.5;
        let descriptor = ProviderDescriptor::Hashed { dim: 3, seed: 4 };
        let checkpoint =
            Checkpoint::from_params(&params, descriptor.clone(), TrainConfig::default());
        let text = checkpoint.to_json_pretty();
        let loaded = Checkpoint::from_json(&text).unwrap();
        assert_eq!(loaded, checkpoint);
        let restored = loaded.to_params().unwrap();
        assert_eq!(restored, params);
        assert_eq!(loaded.embeddings, descriptor);
    }

    #[test]
    fn checkpoint_rejects_unexpected_lambda() {
        let params = ModelParams::new(MetricKind::Vp, None);
        let mut checkpoint = Checkpoint::from_params(
            &params,
            ProviderDescriptor::Hashed { dim: 2, seed: 0 },
            TrainConfig::default(),
        );
        checkpoint.lambda = Some(2.0);
        assert!(matches!(
            checkpoint.to_params(),
            Err(TrainError::Checkpoint(_))
        ));
    }
}
