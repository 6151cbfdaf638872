//! Confidence-aware reranking of one query's candidate list.
//!
//! Per query: estimate the query-only confidence `c_q`; keep the baseline when
//! `c_q >= T_q`; otherwise estimate `c_{q,d}` for each document in the top-N
//! head, label it promote / preserve / demote against the band `c_q ± m`, and
//! stable-sort the head by label so baseline order survives inside each bin.
//! Documents past the head are appended untouched.
//!
//! Backend failures are fail-open: the baseline order is returned and the
//! failure is recorded in the report.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::{
    sample_answers, BackendError, EntailmentJudge, EntailmentVerdict, Generator, GeneratorInput,
    GeneratorJudge,
};
use crate::clustering::{cluster_greedy, cluster_pairwise, confidence_from_clusters};
use crate::domain::{
    BinLabel, CarConfig, ClusterAssignment, ClusteringMode, ConfidenceReport, ConfidenceValue,
    DocConfidence, DocumentRecord, DomainError, QueryRecord, RankedCandidateList,
    THRESHOLD_EPSILON,
};
use crate::evaluation::RunFile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CarError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("query `{query_id}`: document `{doc_id}` is not in the corpus")]
    MissingDocument { query_id: String, doc_id: String },
    #[error("no bin label for document `{0}`")]
    MissingLabel(String),
    #[error("no query text for query id `{0}`")]
    MissingQuery(String),
}

/// Logical call counters for one query. Counted at the engine boundary, so a
/// cached replay reports the same numbers as the original run.
#[derive(Debug, Default)]
pub struct CallCounters {
    samples: AtomicUsize,
    judgments: AtomicUsize,
}

impl CallCounters {
    pub fn samples(&self) -> usize {
        self.samples.load(Ordering::SeqCst)
    }

    pub fn judgments(&self) -> usize {
        self.judgments.load(Ordering::SeqCst)
    }
}

struct CountedJudge<'a, J: ?Sized> {
    inner: &'a J,
    counters: &'a CallCounters,
}

impl<J: EntailmentJudge + ?Sized> EntailmentJudge for CountedJudge<'_, J> {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError> {
        self.counters.judgments.fetch_add(1, Ordering::SeqCst);
        self.inner.judge(premise, hypothesis)
    }
}

/// Samples `k` answers for `input`, clusters them and returns the largest
/// cluster share together with the assignment.
pub fn estimate_confidence<G: Generator + ?Sized>(
    input: &GeneratorInput<'_>,
    generator: &G,
    config: &CarConfig,
    counters: &CallCounters,
) -> Result<(ConfidenceValue, ClusterAssignment), BackendError> {
    counters.samples.fetch_add(config.k, Ordering::SeqCst);
    let answers = sample_answers(
        generator,
        input,
        config.k,
        &config.sampling,
        config.answer_normalization,
    )?;
    let judge = CountedJudge {
        inner: &GeneratorJudge::new(generator, config.judging),
        counters,
    };
    let assignment = match config.clustering_mode {
        ClusteringMode::Greedy => cluster_greedy(&answers, &judge)?,
        ClusteringMode::Pairwise => {
            cluster_pairwise(&answers, &judge, config.pairwise_short_circuit)?
        }
    };
    Ok((confidence_from_clusters(&assignment), assignment))
}

/// True when the query is confident enough to keep its baseline ranking.
pub fn passes_gate(c_q: ConfidenceValue, query_threshold: f64) -> bool {
    c_q.value() >= query_threshold - THRESHOLD_EPSILON
}

/// Promote when `c_qd >= c_q + m`, else demote when `c_qd <= c_q - m`, else
/// preserve. The promote test runs first, so `m = 0` with `c_qd = c_q`
/// promotes. Boundaries are inclusive up to [`THRESHOLD_EPSILON`].
pub fn assign_bin(c_qd: ConfidenceValue, c_q: ConfidenceValue, margin: f64) -> BinLabel {
    let delta = c_qd.value() - c_q.value();
    if delta >= margin - THRESHOLD_EPSILON {
        BinLabel::Promote
    } else if delta <= -margin + THRESHOLD_EPSILON {
        BinLabel::Demote
    } else {
        BinLabel::Preserve
    }
}

/// Orders `list` promote, preserve, demote, keeping baseline order within
/// each bin.
pub fn stable_bin_sort(
    list: &RankedCandidateList,
    labels: &HashMap<String, BinLabel>,
) -> Result<RankedCandidateList, CarError> {
    let mut keyed = list
        .entries
        .iter()
        .map(|entry| {
            labels
                .get(&entry.doc_id)
                .map(|label| (-label.as_sign(), entry.clone()))
                .ok_or_else(|| CarError::MissingLabel(entry.doc_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // sort_by_key is stable; baseline position breaks ties.
    keyed.sort_by_key(|(key, _)| *key);
    Ok(RankedCandidateList::new(
        list.query_id.clone(),
        keyed.into_iter().map(|(_, e)| e).collect(),
    ))
}

/// Confidences measured for one query, independent of `T_q` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryConfidences {
    pub query_id: String,
    pub c_q: Option<ConfidenceValue>,
    /// Head documents in baseline order; `None` when not measured.
    pub per_doc: Option<Vec<(String, ConfidenceValue)>>,
    pub sample_call_count: usize,
    pub judge_call_count: usize,
    pub failure: Option<String>,
}

fn check_documents(
    list: &RankedCandidateList,
    documents: &HashMap<String, DocumentRecord>,
    top_n: usize,
) -> Result<(), CarError> {
    list.validate()?;
    for doc_id in list.doc_ids().take(top_n) {
        if !documents.contains_key(doc_id) {
            return Err(CarError::MissingDocument {
                query_id: list.query_id.clone(),
                doc_id: doc_id.to_string(),
            });
        }
    }
    Ok(())
}

/// Measures `c_q` and, when `needs_documents(c_q)` holds, `c_{q,d}` for the
/// head documents. Document inputs are sampled concurrently.
pub fn measure_query<G, F>(
    query: &QueryRecord,
    list: &RankedCandidateList,
    documents: &HashMap<String, DocumentRecord>,
    generator: &G,
    config: &CarConfig,
    needs_documents: F,
) -> Result<QueryConfidences, CarError>
where
    G: Generator + ?Sized,
    F: FnOnce(ConfidenceValue) -> bool,
{
    config.validate()?;
    check_documents(list, documents, config.top_n)?;
    let counters = CallCounters::default();
    let finish = |c_q, per_doc, failure: Option<BackendError>| QueryConfidences {
        query_id: list.query_id.clone(),
        c_q,
        per_doc,
        sample_call_count: counters.samples(),
        judge_call_count: counters.judgments(),
        failure: failure.map(|e| e.to_string()),
    };

    let c_q = match estimate_confidence(
        &GeneratorInput::QueryOnly { query },
        generator,
        config,
        &counters,
    ) {
        Ok((c_q, _)) => c_q,
        Err(err) => {
            log::warn!(
                "query `{}`: query-only sampling failed: {err}",
                query.query_id
            );
            return Ok(finish(None, None, Some(err)));
        }
    };
    if !needs_documents(c_q) {
        return Ok(finish(Some(c_q), None, None));
    }

    let (head, _) = list.truncate_scope(config.top_n);
    let results: Vec<Result<ConfidenceValue, BackendError>> = head
        .entries
        .par_iter()
        .map(|entry| {
            let document = &documents[&entry.doc_id];
            let input = GeneratorInput::QueryDoc { query, document };
            estimate_confidence(&input, generator, config, &counters).map(|(c, _)| c)
        })
        .collect();
    let mut per_doc = Vec::with_capacity(results.len());
    for (entry, result) in head.entries.iter().zip(results) {
        match result {
            Ok(c) => per_doc.push((entry.doc_id.clone(), c)),
            Err(err) => {
                log::warn!(
                    "query `{}`, document `{}`: sampling failed: {err}",
                    query.query_id,
                    entry.doc_id
                );
                return Ok(finish(Some(c_q), None, Some(err)));
            }
        }
    }
    Ok(finish(Some(c_q), Some(per_doc), None))
}

/// Gating, binning and order-preserving sort for already measured
/// confidences. Returns the baseline unchanged when measurement failed or
/// the query passes the gate.
pub fn apply_correction(
    list: &RankedCandidateList,
    measured: &QueryConfidences,
    query_threshold: f64,
    margin: f64,
    disable_qt: bool,
    top_n: usize,
) -> (RankedCandidateList, ConfidenceReport) {
    let mut report = ConfidenceReport {
        query_id: list.query_id.clone(),
        c_q: measured.c_q,
        gated: false,
        per_doc: Vec::new(),
        judge_call_count: measured.judge_call_count,
        sample_call_count: measured.sample_call_count,
        failure: measured.failure.clone(),
    };
    let Some(c_q) = measured.c_q.filter(|_| measured.failure.is_none()) else {
        return (list.clone(), report);
    };
    if !disable_qt && passes_gate(c_q, query_threshold) {
        report.gated = true;
        return (list.clone(), report);
    }
    let per_doc = measured
        .per_doc
        .as_ref()
        .expect("document confidences are measured for every corrected query");

    report.per_doc = per_doc
        .iter()
        .map(|(doc_id, c_qd)| DocConfidence {
            doc_id: doc_id.clone(),
            c_qd: *c_qd,
            delta: c_qd.value() - c_q.value(),
            label: assign_bin(*c_qd, c_q, margin),
        })
        .collect();
    let labels: HashMap<String, BinLabel> = report
        .per_doc
        .iter()
        .map(|d| (d.doc_id.clone(), d.label))
        .collect();

    let (head, tail) = list.truncate_scope(top_n);
    let mut reranked = stable_bin_sort(&head, &labels).expect("every head document is labelled");
    reranked.entries.extend(tail.entries);
    (reranked, report)
}

/// Runs the full reranking pass for one query.
pub fn rerank_query<G: Generator + ?Sized>(
    query: &QueryRecord,
    list: &RankedCandidateList,
    documents: &HashMap<String, DocumentRecord>,
    generator: &G,
    config: &CarConfig,
) -> Result<(RankedCandidateList, ConfidenceReport), CarError> {
    let measured = measure_query(query, list, documents, generator, config, |c_q| {
        config.disable_qt || !passes_gate(c_q, config.query_threshold)
    })?;
    Ok(apply_correction(
        list,
        &measured,
        config.query_threshold,
        config.effective_margin(),
        config.disable_qt,
        config.top_n,
    ))
}

/// Pairs every candidate list with its query record, in list order.
pub fn pair_queries<'a>(
    queries: &'a [QueryRecord],
    lists: &'a [RankedCandidateList],
) -> Result<Vec<(&'a QueryRecord, &'a RankedCandidateList)>, CarError> {
    let by_id: HashMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    lists
        .iter()
        .map(|list| {
            by_id
                .get(list.query_id.as_str())
                .map(|q| (*q, list))
                .ok_or_else(|| CarError::MissingQuery(list.query_id.clone()))
        })
        .collect()
}

/// Reranks every list independently. The output run encodes order as
/// descending scores `n, n-1, …`. Only validation errors abort the batch.
pub fn rerank_corpus<G: Generator + ?Sized>(
    queries: &[QueryRecord],
    lists: &[RankedCandidateList],
    documents: &HashMap<String, DocumentRecord>,
    generator: &G,
    config: &CarConfig,
    run_tag: &str,
) -> Result<(RunFile, Vec<ConfidenceReport>), CarError> {
    config.validate()?;
    let pairs = pair_queries(queries, lists)?;
    let outcomes = pairs
        .par_iter()
        .map(|(query, list)| rerank_query(query, list, documents, generator, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut run = RunFile::new(run_tag);
    let mut reports = Vec::with_capacity(outcomes.len());
    for (list, report) in outcomes {
        run.push_with_rank_scores(&list);
        reports.push(report);
    }
    Ok((run, reports))
}
