//! Grid search over the query threshold and confidence margin.
//!
//! Confidences do not depend on `(T_q, m)`, so every query is measured once
//! and each grid cell only re-runs gating, binning and the stable sort.

use std::collections::HashMap;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::Generator;
use crate::domain::{CarConfig, DocumentRecord, DomainError, QueryRecord, RankedCandidateList};
use crate::engine::{
    apply_correction, measure_query, pair_queries, passes_gate, CarError, QueryConfidences,
};
use crate::evaluation::{ndcg_at_k, EvalError, QrelsTable, RunFile};

pub const DEFAULT_NDCG_CUTOFF: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error(transparent)]
    Car(#[from] CarError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<DomainError> for SweepError {
    fn from(err: DomainError) -> Self {
        SweepError::Car(err.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub query_thresholds: Vec<f64>,
    pub margins: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
        Self {
            query_thresholds: tenths.clone(),
            margins: tenths,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.query_thresholds.is_empty() || self.margins.is_empty() {
            return Err(DomainError::InvalidConfig(
                "sweep grid axes must be non-empty".into(),
            ));
        }
        if let Some(t) = self
            .query_thresholds
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return Err(DomainError::InvalidConfig(format!(
                "grid threshold {t} is outside [0, 1]"
            )));
        }
        if let Some(m) = self.margins.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(DomainError::InvalidConfig(format!(
                "grid margin {m} must be a non-negative number"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub query_threshold: f64,
    pub margin: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub ndcg_cutoff: usize,
    /// Row-major: thresholds outer, margins inner.
    pub cells: Vec<SweepCell>,
    pub baseline_ndcg: f64,
    pub measured: Vec<QueryConfidences>,
}

impl SweepResult {
    /// Highest-scoring cell; ties go to the first in row-major order.
    pub fn best(&self) -> SweepCell {
        self.cells
            .iter()
            .copied()
            .reduce(|best, cell| if cell.ndcg > best.ndcg { cell } else { best })
            .expect("a validated grid has at least one cell")
    }

    pub fn sample_call_count(&self) -> usize {
        self.measured.iter().map(|m| m.sample_call_count).sum()
    }

    pub fn judge_call_count(&self) -> usize {
        self.measured.iter().map(|m| m.judge_call_count).sum()
    }

    pub fn write_csv<W: Write>(&self, header: &[String], mut out: W) -> io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(
            out,
            "# baseline ndcg@{}={:.6}",
            self.ndcg_cutoff, self.baseline_ndcg
        )?;
        writeln!(out, "t_q,m,ndcg@{}", self.ndcg_cutoff)?;
        for cell in &self.cells {
            writeln!(
                out,
                "{:.1},{:.1},{:.6}",
                cell.query_threshold, cell.margin, cell.ndcg
            )?;
        }
        let best = self.best();
        writeln!(
            out,
            "# best t_q={:.1} m={:.1} ndcg@{}={:.6}",
            best.query_threshold, best.margin, self.ndcg_cutoff, best.ndcg
        )
    }
}

/// Measures every query once, then scores each `(T_q, m)` cell by NDCG.
///
/// `config.disable_qt`, `config.disable_cm` and `config.top_n` apply to every
/// cell; its own threshold and margin are ignored.
#[allow(clippy::too_many_arguments)]
pub fn sweep<G: Generator + ?Sized>(
    queries: &[QueryRecord],
    lists: &[RankedCandidateList],
    documents: &HashMap<String, DocumentRecord>,
    generator: &G,
    config: &CarConfig,
    qrels: &QrelsTable,
    grid: &SweepGrid,
    ndcg_cutoff: usize,
) -> Result<SweepResult, SweepError> {
    config.validate()?;
    grid.validate()?;
    let pairs = pair_queries(queries, lists)?;
    let measured = pairs
        .par_iter()
        .map(|(query, list)| {
            measure_query(query, list, documents, generator, config, |c_q| {
                config.disable_qt || grid.query_thresholds.iter().any(|t| !passes_gate(c_q, *t))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut baseline = RunFile::new("baseline");
    for (_, list) in &pairs {
        baseline.push_with_rank_scores(list);
    }
    let baseline_ndcg = ndcg_at_k(&baseline, qrels, ndcg_cutoff)?.mean;

    let cells = grid
        .query_thresholds
        .iter()
        .flat_map(|t| grid.margins.iter().map(move |m| (*t, *m)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(query_threshold, margin)| {
            let effective = if config.disable_cm { 0.0 } else { margin };
            let mut run = RunFile::new("sweep");
            for ((_, list), confidences) in pairs.iter().zip(&measured) {
                let (reranked, _) = apply_correction(
                    list,
                    confidences,
                    query_threshold,
                    effective,
                    config.disable_qt,
                    config.top_n,
                );
                run.push_with_rank_scores(&reranked);
            }
            ndcg_at_k(&run, qrels, ndcg_cutoff).map(|report| SweepCell {
                query_threshold,
                margin,
                ndcg: report.mean,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(SweepResult {
        ndcg_cutoff,
        cells,
        baseline_ndcg,
        measured,
    })
}
