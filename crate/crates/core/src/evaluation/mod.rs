//! Ranking and generation quality metrics: NDCG@K with exponential gain,
//! token-level F1 and relative improvement in percent.

mod trec;

use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use thiserror::Error;

use crate::domain::RankedCandidateList;

pub use trec::{parse_qrels, parse_run, write_run, ParseError, QrelsTable, RunFile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no query in the evaluation set has a relevant document")]
    EmptyEvaluationSet,
    #[error("relative improvement is undefined for a baseline score of {0}")]
    ZeroBaseline(f64),
}

/// Discounted cumulative gain over the first `k` grades, gain `2^rel - 1`
/// and discount `log2(i + 1)` for 1-based position `i`.
pub fn dcg_at_k(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the best possible ordering of every judged document.
pub fn ideal_dcg_at_k(qrels: &QrelsTable, query_id: &str, k: usize) -> f64 {
    let mut grades = qrels.judged_grades(query_id);
    grades.sort_unstable_by(|a, b| b.cmp(a));
    dcg_at_k(&grades, k)
}

/// NDCG@k of one ranked list, or `None` when the query has no relevant
/// document (IDCG = 0).
pub fn ndcg_of_list(list: &RankedCandidateList, qrels: &QrelsTable, k: usize) -> Option<f64> {
    let ideal = ideal_dcg_at_k(qrels, &list.query_id, k);
    if ideal <= 0.0 {
        return None;
    }
    let grades: Vec<u32> = list
        .doc_ids()
        .take(k)
        .map(|d| qrels.grade(&list.query_id, d))
        .collect();
    Some(dcg_at_k(&grades, k) / ideal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub k: Option<usize>,
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
}

impl MetricReport {
    fn from_values(
        metric: String,
        k: Option<usize>,
        per_query: Vec<(String, f64)>,
    ) -> Result<Self, EvalError> {
        if per_query.is_empty() {
            return Err(EvalError::EmptyEvaluationSet);
        }
        let mean = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
        Ok(Self {
            metric,
            k,
            per_query,
            mean,
        })
    }

    pub fn value(&self, query_id: &str) -> Option<f64> {
        self.per_query
            .iter()
            .find(|(q, _)| q == query_id)
            .map(|(_, v)| *v)
    }

    /// Same metric limited to `query_ids`, with the mean recomputed.
    pub fn restricted_to(&self, query_ids: &HashSet<String>) -> Result<Self, EvalError> {
        let kept = self
            .per_query
            .iter()
            .filter(|(q, _)| query_ids.contains(q))
            .cloned()
            .collect();
        Self::from_values(self.metric.clone(), self.k, kept)
    }

    /// `query_id,value` rows followed by a `MEAN` summary row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "query_id,{}", self.metric)?;
        for (query_id, value) in &self.per_query {
            writeln!(out, "{query_id},{value:.6}")?;
        }
        writeln!(out, "MEAN,{:.6}", self.mean)
    }
}

/// Per-query NDCG@k over every run query with at least one relevant
/// judgment; the macro-average skips the rest.
pub fn ndcg_at_k(run: &RunFile, qrels: &QrelsTable, k: usize) -> Result<MetricReport, EvalError> {
    assert!(k >= 1, "NDCG cutoff must be at least 1");
    let per_query = run
        .lists
        .iter()
        .filter_map(|list| ndcg_of_list(list, qrels, k).map(|v| (list.query_id.clone(), v)))
        .collect();
    MetricReport::from_values(format!("ndcg@{k}"), Some(k), per_query)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenOverlap {
    /// Distinct tokens, `|Pred ∩ Gold|` over sets.
    #[default]
    Set,
    /// Token multisets, the convention of common QA evaluators.
    Bag,
}

fn tokens(text: &str) -> Vec<String> {
    text.trim()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token F1 with set semantics.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    token_f1_with(predicted, gold, TokenOverlap::Set)
}

pub fn token_f1_with(predicted: &str, gold: &str, overlap: TokenOverlap) -> f64 {
    let (pred, gold) = (tokens(predicted), tokens(gold));
    let (common, pred_len, gold_len) = match overlap {
        TokenOverlap::Set => {
            let pred: HashSet<&String> = pred.iter().collect();
            let gold: HashSet<&String> = gold.iter().collect();
            (pred.intersection(&gold).count(), pred.len(), gold.len())
        }
        TokenOverlap::Bag => {
            let mut counts: HashMap<&String, usize> = HashMap::new();
            for t in &gold {
                *counts.entry(t).or_default() += 1;
            }
            let common = pred
                .iter()
                .filter(|t| match counts.get_mut(t) {
                    Some(n) if *n > 0 => {
                        *n -= 1;
                        true
                    }
                    _ => false,
                })
                .count();
            (common, pred.len(), gold.len())
        }
    };
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_len as f64;
    let recall = common as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Signed relative change `(treatment - baseline) / baseline * 100`.
pub fn relative_improvement(baseline: f64, treatment: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::ZeroBaseline(baseline));
    }
    Ok((treatment - baseline) / baseline * 100.0)
}
