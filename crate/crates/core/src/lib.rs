//! Few-shot sequence labeling with vector-projection emissions inside a
//! linear-chain CRF.
//!
//! The toolkit tags tokens with IOB labels defined on the fly by a small
//! *support set*: per-label prototype vectors are extracted from the support
//! embeddings, word-label similarities (vector projection and several
//! alternative metrics) become CRF emission scores, and label transitions are
//! tied to a 16-parameter table over abstract `{O, B, I}` tags so they
//! transfer across domains with disjoint label sets.
//!
//! Modules mirror the pipeline:
//!
//! - [`corpus`]: sentences, tag sequences, episodes, label vocabularies,
//!   span extraction, and the domain-file JSON format.
//! - [`embeddings`]: pluggable word embedding providers (static table,
//!   precomputed contextual vectors, deterministic hashed).
//! - [`prototypes`]: per-label mean vectors from a support set.
//! - [`similarity`]: the word-label similarity metrics and their gradients.
//! - [`crf`]: collapsed-transition linear-chain CRF inference and gradients.
//! - [`training`]: episodic training, Adam, support-set fine-tuning,
//!   checkpoints.
//! - [`evaluation`]: span F1, episode-level averaging, error-type analysis.
//! - [`synthbench`]: seeded synthetic episode generator and the metric
//!   comparison experiment.

pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod evaluation;
pub mod prototypes;
pub mod rng;
pub mod similarity;
pub mod synthbench;
pub mod training;

mod linalg;

pub use corpus::{
    build_label_vocab, dataset_stats, extract_spans, parse_domain_file, serialize_domain_file,
    AbstractTag, CorpusError, DatasetStats, DomainFile, Episode, LabelVocab, LabeledSentence,
    Sentence, Span, SupportSet, TagSeq,
};
pub use embeddings::{
    hashed_vector, load_contextual_store, load_static_table, ContextualStore, EmbeddingError,
    EmbeddingMatrix, EmbeddingProvider, HashedConfig, OovPolicy, ProviderDescriptor, StaticTable,
};
pub use evaluation::{
    episode_f1, error_types, pooled_f1, span_f1, Averaging, ErrorCounts, EvalError, F1Report,
    Table,
};
pub use prototypes::{apply_head, compute_prototypes, LinearHead, PrototypeError, Prototypes};
pub use similarity::{
    emission_scores, normalized_linear_view, sim, MetricKind, NormalizedLinearView,
    SimilarityError,
};
pub use training::{
    adam_step, decode_domain, decode_episode, episode_nll, evaluate_on_domain,
    evaluate_with_finetune, finetune_on_support, train, AdamState, Checkpoint, ModelGrads,
    ModelParams, PassStats, Selection, TrainConfig, TrainError,
};

pub use crf::{
    expand_transitions, log_partition, marginals, nll_gradients, posterior_nll, score_sequence,
    viterbi, CdtTable, ExpandedTransitions, Lattice, Marginals, SlotRel,
};

pub use synthbench::{
    comparison_table, generate_domains, run_metric_comparison, MetricComparisonRow, SynthConfig,
    SynthData, SynthError,
};
