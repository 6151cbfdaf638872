use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use car_cli::commands::{
    evaluate, parse_grid_axis, rerank, run_sweep, write_rerank_outputs, write_sweep_csv,
    RerankInputs,
};
use car_cli::config::Settings;
use car_core::sweep::{SweepGrid, DEFAULT_NDCG_CUTOFF};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "car",
    version,
    about = "Confidence-aware reranking of retrieval runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rerank a baseline run and write the corrected run plus a report.
    Rerank {
        #[command(flatten)]
        common: CommonArgs,
        /// Output run file.
        #[arg(long)]
        out: PathBuf,
        /// Report file; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// NDCG@k of one or more runs; the first run is the baseline.
    Evaluate {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NDCG_CUTOFF)]
        k: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over the query threshold and confidence margin.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated thresholds; defaults to 0, 0.1, ..., 1.
        #[arg(long)]
        qt_grid: Option<String>,
        /// Comma-separated margins; defaults to 0, 0.1, ..., 1.
        #[arg(long)]
        cm_grid: Option<String>,
        #[arg(long, default_value_t = DEFAULT_NDCG_CUTOFF)]
        ndcg_k: usize,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `query_id<TAB>text` per line.
    #[arg(long)]
    queries: PathBuf,
    /// `doc_id<TAB>text` per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Baseline run in TREC format.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Samples per input.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    qt: Option<f64>,
    #[arg(long)]
    cm: Option<f64>,
    #[arg(long)]
    top_n: Option<usize>,
    /// greedy or pairwise
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    disable_qt: bool,
    #[arg(long)]
    disable_cm: bool,
    /// scripted or http
    #[arg(long)]
    backend: Option<String>,
    /// Answer script for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
}

impl CommonArgs {
    fn settings(&self) -> Result<Settings> {
        let mut settings = Settings::load(self.config.as_deref())?;
        let overrides = [
            ("k", self.k.map(|v| v.to_string())),
            ("qt", self.qt.map(|v| v.to_string())),
            ("cm", self.cm.map(|v| v.to_string())),
            ("top_n", self.top_n.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("disable_qt", self.disable_qt.then(|| "true".to_string())),
            ("disable_cm", self.disable_cm.then(|| "true".to_string())),
            ("backend", self.backend.clone()),
            (
                "script",
                self.script.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                settings
                    .set(key, &value)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(settings)
    }

    fn inputs(&self) -> RerankInputs {
        RerankInputs {
            queries: self.queries.clone(),
            corpus: self.corpus.clone(),
            run: self.run.clone(),
            cache_dir: self.cache_dir.clone(),
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rerank {
            common,
            out,
            report,
        } => {
            let settings = common.settings()?;
            let outcome = rerank(&settings, &common.inputs())?;
            let report = report.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".report.json");
                name.into()
            });
            write_rerank_outputs(&settings, &outcome, &out, &report)?;
            log::info!(
                "reranked {} queries ({} fail-open); backend: {} sampled answers, {} judgments",
                outcome.reports.len(),
                outcome.failed_queries(),
                outcome.usage.sampled_answers,
                outcome.usage.judge_calls
            );
        }
        Command::Evaluate {
            runs,
            qrels,
            k,
            out,
        } => {
            let evaluation = evaluate(&runs, &qrels, k)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    evaluation.write_csv(std::io::BufWriter::new(file))?;
                }
                None => evaluation.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Sweep {
            common,
            qrels,
            out,
            qt_grid,
            cm_grid,
            ndcg_k,
        } => {
            let settings = common.settings()?;
            let mut grid = SweepGrid::default();
            if let Some(text) = qt_grid {
                grid.query_thresholds = parse_grid_axis(&text)?;
            }
            if let Some(text) = cm_grid {
                grid.margins = parse_grid_axis(&text)?;
            }
            let outcome = run_sweep(&settings, &common.inputs(), &qrels, &grid, ndcg_k)?;
            write_sweep_csv(&settings, &outcome, &out)?;
            let best = outcome.result.best();
            log::info!(
                "best cell t_q={} m={} ndcg@{}={:.6}",
                best.query_threshold,
                best.margin,
                ndcg_k,
                best.ndcg
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
