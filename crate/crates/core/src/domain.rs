//! Shared value types: queries, documents, ranked candidate lists, answer
//! samples, cluster assignments, confidence values and reranking config.
//!
//! Everything here is an immutable value object. Ranks are 0-based; the TREC
//! writer is the only place that converts to 1-based ranks.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when comparing confidences against thresholds.
///
/// Confidences are multiples of `1/k` and thresholds live on a `0.1` grid, so
/// distinct rational values never get closer than `1/(10k)`; anything below
/// this epsilon is floating-point noise from `c + m` style sums.
pub const THRESHOLD_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("duplicate document id `{0}` in ranked list")]
    DuplicateDocId(String),
    #[error("ranked list has an empty query id")]
    EmptyQueryId,
    #[error("query `{0}` has empty text")]
    EmptyQueryText(String),
    #[error("empty document id")]
    EmptyDocId,
    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let record = Self {
            query_id: query_id.into(),
            text: text.into(),
        };
        if record.query_id.is_empty() {
            return Err(DomainError::EmptyQueryId);
        }
        if record.text.trim().is_empty() {
            return Err(DomainError::EmptyQueryText(record.query_id));
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let doc_id = doc_id.into();
        if doc_id.is_empty() {
            return Err(DomainError::EmptyDocId);
        }
        Ok(Self {
            doc_id,
            text: text.into(),
        })
    }
}

/// One position in a ranked list. The baseline score is carried for
/// provenance only; reranking consults order alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub baseline_score: Option<f64>,
}

impl RankedEntry {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            baseline_score: None,
        }
    }

    pub fn scored(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            baseline_score: Some(score),
        }
    }
}

/// A permutation over candidate documents for one query. Position = rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidateList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedCandidateList {
    pub fn new(query_id: impl Into<String>, entries: Vec<RankedEntry>) -> Self {
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Builds a score-less list from doc ids in rank order.
    pub fn from_doc_ids<I, S>(query_id: impl Into<String>, doc_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            query_id,
            doc_ids.into_iter().map(RankedEntry::new).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        validate_ranked_list(self)
    }

    /// Splits into the first `top_n` entries and the remainder, both in order.
    pub fn truncate_scope(&self, top_n: usize) -> (RankedCandidateList, RankedCandidateList) {
        truncate_scope(self, top_n)
    }
}

pub fn validate_ranked_list(list: &RankedCandidateList) -> Result<(), DomainError> {
    if list.query_id.is_empty() {
        return Err(DomainError::EmptyQueryId);
    }
    let mut seen = HashSet::with_capacity(list.entries.len());
    for entry in &list.entries {
        if entry.doc_id.is_empty() {
            return Err(DomainError::EmptyDocId);
        }
        if !seen.insert(entry.doc_id.as_str()) {
            return Err(DomainError::DuplicateDocId(entry.doc_id.clone()));
        }
    }
    Ok(())
}

pub fn truncate_scope(
    list: &RankedCandidateList,
    top_n: usize,
) -> (RankedCandidateList, RankedCandidateList) {
    let cut = top_n.min(list.entries.len());
    let (head, tail) = list.entries.split_at(cut);
    (
        RankedCandidateList::new(list.query_id.clone(), head.to_vec()),
        RankedCandidateList::new(list.query_id.clone(), tail.to_vec()),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub text: String,
    pub sample_index: usize,
}

/// Semantic-cluster labels for one input's `k` answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Labels must already be contiguous `0..r` with every id used.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self, DomainError> {
        if labels.is_empty() {
            return Err(DomainError::InvalidAssignment("no samples".into()));
        }
        let cluster_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; cluster_count];
        for &label in &labels {
            sizes[label] += 1;
        }
        if let Some(gap) = sizes.iter().position(|&n| n == 0) {
            return Err(DomainError::InvalidAssignment(format!(
                "cluster id {gap} is unused"
            )));
        }
        Ok(Self { labels, sizes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }

    /// Largest cluster share, `max_j n_j / k`.
    pub fn confidence(&self) -> ConfidenceValue {
        let largest = self.sizes.iter().copied().max().unwrap_or(0);
        ConfidenceValue::from_counts(largest, self.labels.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceValue(f64);

impl ConfidenceValue {
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(Self(value))
    }

    pub fn from_counts(largest_cluster: usize, samples: usize) -> Self {
        assert!(samples > 0, "confidence needs at least one sample");
        assert!(largest_cluster <= samples);
        Self(largest_cluster as f64 / samples as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for ConfidenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Posterior correction label. Ordered so that sorting by `sort_rank`
/// yields promote, preserve, demote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinLabel {
    Promote,
    Preserve,
    Demote,
}

impl BinLabel {
    pub fn as_sign(self) -> i8 {
        match self {
            BinLabel::Promote => 1,
            BinLabel::Preserve => 0,
            BinLabel::Demote => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(BinLabel::Promote),
            0 => Some(BinLabel::Preserve),
            -1 => Some(BinLabel::Demote),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocConfidence {
    pub doc_id: String,
    pub c_qd: ConfidenceValue,
    pub delta: f64,
    pub label: BinLabel,
}

/// Outcome of one query's reranking pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub query_id: String,
    /// Missing only when query-only sampling itself failed.
    pub c_q: Option<ConfidenceValue>,
    pub gated: bool,
    pub per_doc: Vec<DocConfidence>,
    pub judge_call_count: usize,
    pub sample_call_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusteringMode {
    /// Token-efficient: compare against cluster representatives only.
    Greedy,
    /// Low-latency: judge every pair, then take connected components.
    Pairwise,
}

impl std::str::FromStr for ClusteringMode {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greedy" => Ok(ClusteringMode::Greedy),
            "pairwise" => Ok(ClusteringMode::Pairwise),
            other => Err(DomainError::InvalidConfig(format!(
                "unknown clustering mode `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ClusteringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusteringMode::Greedy => "greedy",
            ClusteringMode::Pairwise => "pairwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerNormalization {
    None,
    #[default]
    TrimLower,
}

impl AnswerNormalization {
    pub fn apply(self, text: &str) -> String {
        match self {
            AnswerNormalization::None => text.to_string(),
            AnswerNormalization::TrimLower => text.trim().to_lowercase(),
        }
    }
}

impl std::str::FromStr for AnswerNormalization {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AnswerNormalization::None),
            "trim_lower" => Ok(AnswerNormalization::TrimLower),
            other => Err(DomainError::InvalidConfig(format!(
                "unknown answer normalization `{other}`"
            ))),
        }
    }
}

impl fmt::Display for AnswerNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerNormalization::None => "none",
            AnswerNormalization::TrimLower => "trim_lower",
        })
    }
}

/// Decoding parameters sent with each generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Decoding {
    pub const SAMPLING: Decoding = Decoding {
        temperature: 1.0,
        max_tokens: 64,
    };
    pub const JUDGING: Decoding = Decoding {
        temperature: 0.0,
        max_tokens: 8,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarConfig {
    /// Samples per input.
    pub k: usize,
    pub query_threshold: f64,
    pub confidence_margin: f64,
    /// Only the first `top_n` candidates are reranked.
    pub top_n: usize,
    pub clustering_mode: ClusteringMode,
    /// Ablation: correct every query regardless of its confidence.
    pub disable_qt: bool,
    /// Ablation: bin with a zero margin.
    pub disable_cm: bool,
    /// Skip the reverse entailment direction in pairwise mode once the
    /// forward one fails. Greedy mode always short-circuits.
    pub pairwise_short_circuit: bool,
    pub sampling: Decoding,
    pub judging: Decoding,
    pub answer_normalization: AnswerNormalization,
}

impl Default for CarConfig {
    fn default() -> Self {
        Self {
            k: 10,
            query_threshold: 0.8,
            confidence_margin: 0.2,
            top_n: 10,
            clustering_mode: ClusteringMode::Greedy,
            disable_qt: false,
            disable_cm: false,
            pairwise_short_circuit: false,
            sampling: Decoding::SAMPLING,
            judging: Decoding::JUDGING,
            answer_normalization: AnswerNormalization::TrimLower,
        }
    }
}

impl CarConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.k < 2 {
            return Err(DomainError::InvalidConfig(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.query_threshold) {
            return Err(DomainError::InvalidConfig(format!(
                "query threshold {} outside [0, 1]",
                self.query_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_margin) {
            return Err(DomainError::InvalidConfig(format!(
                "confidence margin {} outside [0, 1]",
                self.confidence_margin
            )));
        }
        if self.top_n == 0 {
            return Err(DomainError::InvalidConfig(
                "top_n must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Margin actually used for binning once ablations are applied.
    pub fn effective_margin(&self) -> f64 {
        if self.disable_cm {
            0.0
        } else {
            self.confidence_margin
        }
    }
}
