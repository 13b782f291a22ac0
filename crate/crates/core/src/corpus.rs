//! Sentences, IOB tag sequences, support sets, episodes, and label
//! vocabularies, plus the domain-file JSON format.
//!
//! Tags are either `"O"` or `"<B|I>-<slot>"` where the slot name is a
//! non-empty string without whitespace. Span extraction follows the CoNLL
//! evaluation script: a span starts at `B-X`, or at an `I-X` whose
//! predecessor is neither `B-X` nor `I-X` of the same slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where inside a domain file a validation error was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Support,
    Query,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Section::Support => write!(f, "support"),
            Section::Query => write!(f, "query"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("token {token:?} is empty or contains whitespace")]
    BadToken { token: String },
    #[error("tag {tag:?} is not \"O\" or \"<B|I>-<slot>\"")]
    BadTag { tag: String },
    #[error("{tags} tags paired with {tokens} tokens")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("{sentences} sentences but {tags} tag sequences")]
    SentenceTagArity { sentences: usize, tags: usize },
    #[error("\"ids\" has {got} entries for {expected} sentences")]
    IdArity { expected: usize, got: usize },
    #[error("duplicate sentence id {id:?}")]
    DuplicateId { id: String },
    #[error("support set is empty")]
    EmptySupport,
    #[error("support set contains no slot tags")]
    NoSlots,
    #[error("domain file contains no episodes")]
    NoEpisodes,
    #[error("episode {episode}, {section} sentence {sentence}: {source}")]
    At {
        episode: usize,
        section: Section,
        sentence: usize,
        source: Box<CorpusError>,
    },
    #[error("episode {episode}: {source}")]
    AtEpisode {
        episode: usize,
        source: Box<CorpusError>,
    },
}

/// Abstract view of a concrete tag: outside, begin, or inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbstractTag {
    O,
    B,
    I,
}

impl fmt::Display for AbstractTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractTag::O => write!(f, "O"),
            AbstractTag::B => write!(f, "B"),
            AbstractTag::I => write!(f, "I"),
        }
    }
}

/// Splits a tag into its abstract part and slot name, validating the grammar.
fn parse_tag(tag: &str) -> Result<(AbstractTag, Option<&str>), CorpusError> {
    if tag == "O" {
        return Ok((AbstractTag::O, None));
    }
    let abstract_tag = if let Some(rest) = tag.strip_prefix("B-") {
        (AbstractTag::B, rest)
    } else if let Some(rest) = tag.strip_prefix("I-") {
        (AbstractTag::I, rest)
    } else {
        return Err(CorpusError::BadTag { tag: tag.into() });
    };
    let (kind, slot) = abstract_tag;
    if slot.is_empty() || slot.chars().any(char::is_whitespace) {
        return Err(CorpusError::BadTag { tag: tag.into() });
    }
    Ok((kind, Some(slot)))
}

/// A tokenized sentence, optionally keyed by a stable id for contextual
/// embedding lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    id: Option<String>,
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(id: Option<String>, tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        for token in &tokens {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(CorpusError::BadToken {
                    token: token.clone(),
                });
            }
        }
        Ok(Self { id, tokens })
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }
}

/// An IOB tag sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSeq {
    tags: Vec<String>,
}

impl TagSeq {
    pub fn new(tags: Vec<String>) -> Result<Self, CorpusError> {
        for tag in &tags {
            parse_tag(tag)?;
        }
        Ok(Self { tags })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// A sentence paired with its gold tags (always length-matched).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    sentence: Sentence,
    tags: TagSeq,
}

impl LabeledSentence {
    pub fn new(sentence: Sentence, tags: TagSeq) -> Result<Self, CorpusError> {
        if sentence.len() != tags.len() {
            return Err(CorpusError::LengthMismatch {
                tokens: sentence.len(),
                tags: tags.len(),
            });
        }
        Ok(Self { sentence, tags })
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn tags(&self) -> &TagSeq {
        &self.tags
    }
}

/// The labeled sentences that define a domain's labels in an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSet {
    items: Vec<LabeledSentence>,
}

impl SupportSet {
    pub fn new(items: Vec<LabeledSentence>) -> Result<Self, CorpusError> {
        if items.is_empty() {
            return Err(CorpusError::EmptySupport);
        }
        let has_slot = items
            .iter()
            .flat_map(|it| it.tags().tags())
            .any(|t| t != "O");
        if !has_slot {
            return Err(CorpusError::NoSlots);
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[LabeledSentence] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }
}

/// One support set plus one query batch: the unit of few-shot training and
/// evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub support: SupportSet,
    pub query: Vec<LabeledSentence>,
}

impl Episode {
    /// Slot names that occur in query tags but nowhere in the support set.
    /// Gold spans with these slots can never be predicted.
    pub fn unseen_query_slots(&self) -> BTreeSet<String> {
        let known: BTreeSet<&str> = self
            .support
            .items()
            .iter()
            .flat_map(|it| it.tags().tags())
            .filter_map(|t| parse_tag(t).ok().and_then(|(_, s)| s))
            .collect();
        self.query
            .iter()
            .flat_map(|it| it.tags().tags())
            .filter_map(|t| parse_tag(t).ok().and_then(|(_, s)| s))
            .filter(|s| !known.contains(s))
            .map(String::from)
            .collect()
    }
}

/// A named collection of episodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainFile {
    pub domain: String,
    pub episodes: Vec<Episode>,
}

impl DomainFile {
    pub fn new(domain: String, episodes: Vec<Episode>) -> Result<Self, CorpusError> {
        if episodes.is_empty() {
            return Err(CorpusError::NoEpisodes);
        }
        Ok(Self { domain, episodes })
    }
}

/// A labeled token span, end-inclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

/// Ordered label set for one episode: `"O"` at index 0, then the remaining
/// tags sorted lexicographically.
///
/// Observing `B-x` without `I-x` (or vice versa) synthesizes the missing
/// partner so the label lattice can represent every legal span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    slots: Vec<Option<String>>,
    abstracts: Vec<AbstractTag>,
    synthesized: Vec<bool>,
    index: BTreeMap<String, usize>,
}

impl LabelVocab {
    /// Builds a vocabulary directly from a tag set, applying the same
    /// ordering and partner synthesis as [`build_label_vocab`]. Unlike a
    /// support set, the tag set may contain no slots at all.
    pub fn from_labels<I, S>(tags: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut observed = BTreeSet::new();
        for tag in tags {
            let tag = tag.as_ref();
            parse_tag(tag)?;
            if tag != "O" {
                observed.insert(tag.to_string());
            }
        }
        Ok(Self::from_observed(&observed))
    }

    fn from_observed(observed: &BTreeSet<String>) -> Self {
        let mut all: BTreeSet<String> = observed.clone();
        for tag in observed {
            let (kind, slot) = parse_tag(tag).expect("validated");
            let slot = slot.expect("non-O tag has a slot");
            let partner = match kind {
                AbstractTag::B => format!("I-{slot}"),
                AbstractTag::I => format!("B-{slot}"),
                AbstractTag::O => unreachable!(),
            };
            if !observed.contains(&partner) {
                if kind == AbstractTag::I {
                    log::warn!("support has {tag} without {partner}; synthesizing {partner}");
                }
                all.insert(partner);
            }
        }

        let mut labels = vec!["O".to_string()];
        labels.extend(all.iter().cloned()); // BTreeSet iterates in sorted order

        let mut slots = Vec::with_capacity(labels.len());
        let mut abstracts = Vec::with_capacity(labels.len());
        let mut synthesized = Vec::with_capacity(labels.len());
        let mut index = BTreeMap::new();
        for (k, label) in labels.iter().enumerate() {
            let (kind, slot) = parse_tag(label).expect("constructed from valid tags");
            slots.push(slot.map(String::from));
            abstracts.push(kind);
            synthesized.push(label != "O" && !observed.contains(label));
            index.insert(label.clone(), k);
        }

        LabelVocab {
            labels,
            slots,
            abstracts,
            synthesized,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always contains "O"
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn slot_of(&self, k: usize) -> Option<&str> {
        self.slots[k].as_deref()
    }

    pub fn abstract_of(&self, k: usize) -> AbstractTag {
        self.abstracts[k]
    }

    /// True for labels that were added as B-/I- partners rather than observed.
    pub fn is_synthesized(&self, k: usize) -> bool {
        self.synthesized[k]
    }
}

/// Builds the label vocabulary for a support set.
pub fn build_label_vocab(support: &SupportSet) -> LabelVocab {
    let mut observed: BTreeSet<String> = BTreeSet::new();
    for item in support.items() {
        for tag in item.tags().tags() {
            if tag != "O" {
                observed.insert(tag.clone());
            }
        }
    }
    LabelVocab::from_observed(&observed)
}

/// Extracts labeled spans with CoNLL-script semantics.
pub fn extract_spans(tags: &TagSeq) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.tags().iter().enumerate() {
        let (kind, slot) = parse_tag(tag).expect("validated at construction");
        match kind {
            AbstractTag::O => {
                if let Some((slot, start)) = open.take() {
                    spans.push(Span {
                        slot,
                        start,
                        end: i - 1,
                    });
                }
            }
            AbstractTag::B => {
                if let Some((slot, start)) = open.take() {
                    spans.push(Span {
                        slot,
                        start,
                        end: i - 1,
                    });
                }
                open = Some((slot.unwrap().to_string(), i));
            }
            AbstractTag::I => {
                let slot = slot.unwrap();
                let continues = matches!(&open, Some((s, _)) if s == slot);
                if !continues {
                    if let Some((s, start)) = open.take() {
                        spans.push(Span {
                            slot: s,
                            start,
                            end: i - 1,
                        });
                    }
                    open = Some((slot.to_string(), i));
                }
            }
        }
    }
    if let Some((slot, start)) = open {
        spans.push(Span {
            slot,
            start,
            end: tags.len() - 1,
        });
    }
    spans
}

/// Summary statistics for a domain file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub avg_support_size: f64,
    pub n_query_sentences: usize,
    pub n_labels: usize,
}

/// Computes support-size, query-count, and label statistics.
pub fn dataset_stats(file: &DomainFile) -> DatasetStats {
    let n_episodes = file.episodes.len();
    let total_support: usize = file.episodes.iter().map(|e| e.support.len()).sum();
    let n_query_sentences = file.episodes.iter().map(|e| e.query.len()).sum();
    let mut union: BTreeSet<String> = BTreeSet::new();
    for episode in &file.episodes {
        let vocab = build_label_vocab(&episode.support);
        union.extend(vocab.labels().iter().cloned());
    }
    DatasetStats {
        avg_support_size: total_support as f64 / n_episodes as f64,
        n_query_sentences,
        n_labels: union.len(),
    }
}

// Wire format for domain files.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionWire {
    sentences: Vec<Vec<String>>,
    tags: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeWire {
    support: SectionWire,
    query: SectionWire,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFileWire {
    domain: String,
    episodes: Vec<EpisodeWire>,
}

fn located(episode: usize, section: Section, sentence: usize, source: CorpusError) -> CorpusError {
    CorpusError::At {
        episode,
        section,
        sentence,
        source: Box::new(source),
    }
}

fn parse_section(
    wire: SectionWire,
    episode: usize,
    section: Section,
    seen_ids: &mut BTreeSet<String>,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    if wire.sentences.len() != wire.tags.len() {
        return Err(CorpusError::AtEpisode {
            episode,
            source: Box::new(CorpusError::SentenceTagArity {
                sentences: wire.sentences.len(),
                tags: wire.tags.len(),
            }),
        });
    }
    if let Some(ids) = &wire.ids {
        if ids.len() != wire.sentences.len() {
            return Err(CorpusError::AtEpisode {
                episode,
                source: Box::new(CorpusError::IdArity {
                    expected: wire.sentences.len(),
                    got: ids.len(),
                }),
            });
        }
        for id in ids {
            if !seen_ids.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { id: id.clone() });
            }
        }
    }

    let ids = wire.ids;
    wire.sentences
        .into_iter()
        .zip(wire.tags)
        .enumerate()
        .map(|(j, (tokens, tags))| {
            let id = ids.as_ref().map(|ids| ids[j].clone());
            let sentence = Sentence::new(id, tokens).map_err(|e| located(episode, section, j, e))?;
            let tags = TagSeq::new(tags).map_err(|e| located(episode, section, j, e))?;
            LabeledSentence::new(sentence, tags).map_err(|e| located(episode, section, j, e))
        })
        .collect()
}

/// Parses and fully validates a domain file from its JSON text.
pub fn parse_domain_file(text: &str) -> Result<DomainFile, CorpusError> {
    let wire: DomainFileWire = serde_json::from_str(text)?;
    if wire.episodes.is_empty() {
        return Err(CorpusError::NoEpisodes);
    }

    let mut seen_ids = BTreeSet::new();
    let mut episodes = Vec::with_capacity(wire.episodes.len());
    for (i, ep) in wire.episodes.into_iter().enumerate() {
        let support_items = parse_section(ep.support, i, Section::Support, &mut seen_ids)?;
        let query = parse_section(ep.query, i, Section::Query, &mut seen_ids)?;
        let support = SupportSet::new(support_items).map_err(|e| CorpusError::AtEpisode {
            episode: i,
            source: Box::new(e),
        })?;
        let episode = Episode { support, query };
        let unseen = episode.unseen_query_slots();
        if !unseen.is_empty() {
            log::warn!(
                "episode {i} of domain {:?}: query uses slots absent from support: {:?}",
                wire.domain,
                unseen
            );
        }
        episodes.push(episode);
    }
    DomainFile::new(wire.domain, episodes)
}

fn section_to_wire(items: &[LabeledSentence]) -> SectionWire {
    let all_ids: Option<Vec<String>> = items
        .iter()
        .map(|it| it.sentence().id().map(String::from))
        .collect();
    SectionWire {
        sentences: items.iter().map(|it| it.sentence().tokens().to_vec()).collect(),
        tags: items.iter().map(|it| it.tags().tags().to_vec()).collect(),
        ids: all_ids,
    }
}

/// Serializes a domain file back to its JSON text. Sentence ids are emitted
/// only when every sentence in a section carries one.
pub fn serialize_domain_file(file: &DomainFile) -> String {
    let wire = DomainFileWire {
        domain: file.domain.clone(),
        episodes: file
            .episodes
            .iter()
            .map(|e| EpisodeWire {
                support: section_to_wire(e.support.items()),
                query: section_to_wire(&e.query),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("wire structs always serialize")
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_tag() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("O".to_string()),
            ("[BI]", "[a-c]{1,3}").prop_map(|(p, s)| format!("{p}-{s}")),
        ]
    }

    fn arb_tagseq() -> impl Strategy<Value = TagSeq> {
        prop::collection::vec(arb_tag(), 1..12).prop_map(|tags| TagSeq::new(tags).unwrap())
    }

    proptest! {
        #[test]
        fn spans_sorted_and_disjoint(tags in arb_tagseq()) {
            let spans = extract_spans(&tags);
            for span in &spans {
                prop_assert!(span.start <= span.end);
                prop_assert!(span.end < tags.len());
            }
            for pair in spans.windows(2) {
                prop_assert!(pair[0].end < pair[1].start);
            }
        }

        #[test]
        fn round_trip_equality(
            n_support in 1usize..4,
            n_query in 0usize..4,
            lens in prop::collection::vec(1usize..6, 8),
        ) {
            // Build a small file with deterministic tokens and cycling tags.
            let tags_for = |len: usize, offset: usize| -> Vec<String> {
                (0..len)
                    .map(|i| match (i + offset) % 3 {
                        0 => "B-x".to_string(),
                        1 => "I-x".to_string(),
                        _ => "O".to_string(),
                    })
                    .collect()
            };
            let make = |idx: usize, len: usize| {
                let tokens: Vec<String> = (0..len).map(|i| format!("t{idx}_{i}")).collect();
                let sentence = Sentence::new(None, tokens).unwrap();
                LabeledSentence::new(sentence, TagSeq::new(tags_for(len, idx)).unwrap()).unwrap()
            };
            let support: Vec<_> = (0..n_support).map(|i| make(i, lens[i])).collect();
            let query: Vec<_> = (0..n_query).map(|i| make(i + 4, lens[i + 4])).collect();
            let file = DomainFile::new(
                "prop".into(),
                vec![Episode { support: SupportSet::new(support).unwrap(), query }],
            )
            .unwrap();
            let round = parse_domain_file(&serialize_domain_file(&file)).unwrap();
            prop_assert_eq!(file, round);
        }
    }
}
