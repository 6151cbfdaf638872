//! The `rerank`, `evaluate` and `sweep` commands.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use car_core::backend::{CountingGenerator, Generator, PromptTemplates};
use car_core::cache::{CachedGenerator, ResponseCache};
use car_core::domain::{ConfidenceReport, DocumentRecord, QueryRecord};
use car_core::engine::rerank_corpus;
use car_core::evaluation::{
    ndcg_at_k, parse_qrels, parse_run, relative_improvement, write_run, EvalError, MetricReport,
    QrelsTable, RunFile,
};
use car_core::sweep::{sweep, SweepGrid, SweepResult};
use serde::Serialize;

use crate::config::Settings;

/// Inputs shared by `rerank` and `sweep`.
#[derive(Debug, Clone)]
pub struct RerankInputs {
    pub queries: PathBuf,
    pub corpus: PathBuf,
    pub run: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

/// Requests that actually reached the backend, cache hits excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackendUsage {
    pub sample_requests: usize,
    pub sampled_answers: usize,
    pub judge_calls: usize,
}

#[derive(Debug)]
pub struct RerankOutcome {
    pub run: RunFile,
    pub reports: Vec<ConfidenceReport>,
    pub usage: BackendUsage,
}

impl RerankOutcome {
    pub fn failed_queries(&self) -> usize {
        self.reports.iter().filter(|r| r.failure.is_some()).count()
    }
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    config: &'a [String],
    reports: &'a [ConfidenceReport],
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
}

/// `id<TAB>text` lines; blank lines are skipped and ids must be unique.
fn read_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            bail!("{}:{}: expected `id<TAB>text`", path.display(), idx + 1);
        };
        if !seen.insert(id.to_string()) {
            bail!("{}:{}: duplicate id `{id}`", path.display(), idx + 1);
        }
        records.push((id.to_string(), text.to_string()));
    }
    Ok(records)
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    read_tsv(path)?
        .into_iter()
        .map(|(id, text)| QueryRecord::new(id, text).map_err(Into::into))
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<HashMap<String, DocumentRecord>> {
    read_tsv(path)?
        .into_iter()
        .map(|(id, text)| Ok((id.clone(), DocumentRecord::new(id, text)?)))
        .collect()
}

pub fn load_run(path: &Path) -> Result<RunFile> {
    parse_run(open(path)?).with_context(|| format!("parsing run {}", path.display()))
}

pub fn load_qrels(path: &Path) -> Result<QrelsTable> {
    parse_qrels(open(path)?).with_context(|| format!("parsing qrels {}", path.display()))
}

/// Calls `f` with the configured backend, behind the cache when a cache
/// directory is given, and reports how many requests reached the backend.
fn with_generator<R>(
    settings: &Settings,
    cache_dir: Option<&Path>,
    f: impl FnOnce(&dyn Generator) -> Result<R>,
) -> Result<(R, BackendUsage)> {
    let prompts: PromptTemplates = settings.prompts()?;
    let counting = CountingGenerator::new(settings.build_backend(&prompts)?);
    let result = match cache_dir {
        Some(dir) => {
            let cache = ResponseCache::open(dir)
                .with_context(|| format!("opening cache {}", dir.display()))?;
            if cache.corrupt_records() > 0 {
                log::warn!("{} corrupt cache records ignored", cache.corrupt_records());
            }
            f(&CachedGenerator::new(&counting, &cache, prompts))?
        }
        None => f(&counting)?,
    };
    let usage = BackendUsage {
        sample_requests: counting.sample_requests(),
        sampled_answers: counting.sampled_answers(),
        judge_calls: counting.judge_calls(),
    };
    Ok((result, usage))
}

fn summarize_failures(reports: &[ConfidenceReport]) {
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| r.failure.is_some())
        .map(|r| r.query_id.as_str())
        .collect();
    if !failed.is_empty() {
        log::warn!(
            "{} of {} queries kept their baseline order after backend failures: {}",
            failed.len(),
            reports.len(),
            failed.join(", ")
        );
    }
}

/// Reranks a baseline run and returns the result without writing it.
pub fn rerank(settings: &Settings, inputs: &RerankInputs) -> Result<RerankOutcome> {
    settings.validate()?;
    let queries = load_queries(&inputs.queries)?;
    let corpus = load_corpus(&inputs.corpus)?;
    let baseline = load_run(&inputs.run)?;
    let ((run, reports), usage) =
        with_generator(settings, inputs.cache_dir.as_deref(), |generator| {
            Ok(rerank_corpus(
                &queries,
                &baseline.lists,
                &corpus,
                generator,
                &settings.car,
                &settings.run_tag,
            )?)
        })?;
    summarize_failures(&reports);
    Ok(RerankOutcome {
        run,
        reports,
        usage,
    })
}

/// Writes the reranked run and its JSON report, both headed by the resolved
/// configuration.
pub fn write_rerank_outputs(
    settings: &Settings,
    outcome: &RerankOutcome,
    run_path: &Path,
    report_path: &Path,
) -> Result<()> {
    let echo = settings.echo();
    let mut out = create(run_path)?;
    write_run(&outcome.run, &echo, &mut out)?;
    out.flush()?;

    let mut out = create(report_path)?;
    serde_json::to_writer_pretty(
        &mut out,
        &ReportDocument {
            config: &echo,
            reports: &outcome.reports,
        },
    )?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct Evaluation {
    pub k: usize,
    /// `(run name, report)`, baseline first, restricted to the shared queries.
    pub runs: Vec<(String, MetricReport)>,
}

fn run_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// NDCG@k for each run over the queries every run covers. The first run is
/// the baseline for relative improvements.
pub fn evaluate(runs: &[PathBuf], qrels: &Path, k: usize) -> Result<Evaluation> {
    if runs.is_empty() {
        bail!("at least one run is required");
    }
    if k == 0 {
        bail!("the NDCG cutoff must be at least 1");
    }
    let qrels = load_qrels(qrels)?;
    let mut reports = Vec::with_capacity(runs.len());
    for path in runs {
        let report = ndcg_at_k(&load_run(path)?, &qrels, k)
            .with_context(|| format!("evaluating {}", path.display()))?;
        reports.push((run_name(path), report));
    }

    let query_sets: Vec<BTreeSet<&str>> = reports
        .iter()
        .map(|(_, r)| r.per_query.iter().map(|(q, _)| q.as_str()).collect())
        .collect();
    let shared: HashSet<String> = query_sets[0]
        .iter()
        .filter(|q| query_sets.iter().all(|set| set.contains(*q)))
        .map(|q| q.to_string())
        .collect();
    for ((name, _), set) in reports.iter().zip(&query_sets) {
        if set.len() != shared.len() {
            log::warn!(
                "run {name}: {} of its {} evaluated queries are not shared by every run and are skipped",
                set.len() - shared.len(),
                set.len()
            );
        }
    }
    if shared.is_empty() {
        return Err(EvalError::EmptyEvaluationSet).context("the runs share no evaluable queries");
    }
    let runs = reports
        .into_iter()
        .map(|(name, report)| Ok((name, report.restricted_to(&shared)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { k, runs })
}

fn delta_cell(baseline: f64, treatment: f64) -> String {
    match relative_improvement(baseline, treatment) {
        Ok(pct) => format!("{pct:.4}"),
        Err(_) => "NA".to_string(),
    }
}

impl Evaluation {
    /// `run,query_id,ndcg@k,delta_pct` rows per run plus a `MEAN` row each.
    /// Deltas compare against the first run and are empty on its own rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "run,query_id,ndcg@{},delta_pct", self.k)?;
        let (_, baseline) = &self.runs[0];
        for (idx, (name, report)) in self.runs.iter().enumerate() {
            let rows = report
                .per_query
                .iter()
                .map(|(q, v)| (q.as_str(), *v, baseline.value(q).unwrap_or(f64::NAN)))
                .chain(std::iter::once(("MEAN", report.mean, baseline.mean)));
            for (query_id, value, base) in rows {
                let delta = if idx == 0 {
                    String::new()
                } else {
                    delta_cell(base, value)
                };
                writeln!(out, "{name},{query_id},{value:.6},{delta}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub usage: BackendUsage,
}

pub fn run_sweep(
    settings: &Settings,
    inputs: &RerankInputs,
    qrels: &Path,
    grid: &SweepGrid,
    ndcg_cutoff: usize,
) -> Result<SweepOutcome> {
    settings.validate()?;
    let queries = load_queries(&inputs.queries)?;
    let corpus = load_corpus(&inputs.corpus)?;
    let baseline = load_run(&inputs.run)?;
    let qrels = load_qrels(qrels)?;
    let (result, usage) = with_generator(settings, inputs.cache_dir.as_deref(), |generator| {
        Ok(sweep(
            &queries,
            &baseline.lists,
            &corpus,
            generator,
            &settings.car,
            &qrels,
            grid,
            ndcg_cutoff,
        )?)
    })?;
    let failed: Vec<_> = result
        .measured
        .iter()
        .filter(|m| m.failure.is_some())
        .collect();
    if !failed.is_empty() {
        log::warn!(
            "{} queries kept their baseline order after backend failures",
            failed.len()
        );
    }
    Ok(SweepOutcome { result, usage })
}

pub fn write_sweep_csv(settings: &Settings, outcome: &SweepOutcome, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    outcome.result.write_csv(&settings.echo(), &mut out)?;
    out.flush()?;
    Ok(())
}

/// Parses a comma-separated list of numbers.
pub fn parse_grid_axis(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid grid value `{v}`"))
        })
        .collect()
}
