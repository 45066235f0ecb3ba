use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hse_cli::{cmd_graph_eval, cmd_run, cmd_timing, exit_code, DataSource};
use hse_core::graph::GraphKind;
use hse_core::strategies::LogBase;
use hse_core::{Execution, HseError, SessionConfig, StrategyKind};
use hse_service::AppState;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hse", version, about = "Graph-based active learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated-oracle learning curves for one strategy over a seed sweep.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, default_value = "hse")]
        strategy: StrategyKind,
        #[arg(long, default_value = "perplexity")]
        graph: GraphKind,
        /// Number of seeds, starting at --first-seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Include per-query selection times (makes output non-reproducible).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-EER learning curves under different graph constructions.
    GraphEval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, value_delimiter = ',', default_value = "mean,binary,knn,perplexity")]
        kinds: Vec<GraphKind>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the labeling HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of `<name>.csv` datasets addressable by name.
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
        /// Directory for per-session snapshots; sessions found there are restored.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Mean per-query selection time for each strategy.
    Timing {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, value_delimiter = ',', default_value = "hse,eer_full")]
        strategies: Vec<StrategyKind>,
        #[arg(long, default_value = "perplexity")]
        graph: GraphKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV dataset (numeric feature columns plus a label column).
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Generate four Gaussian blobs with this many points instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl DataArgs {
    fn source(&self) -> Result<DataSource, HseError> {
        match (&self.dataset, self.synthetic) {
            (Some(path), None) => Ok(DataSource::Csv { path: path.clone(), label_column: self.label_column.clone() }),
            (None, Some(points)) => Ok(DataSource::FourGaussians { points, seed: self.data_seed }),
            _ => Err(HseError::Usage("give --dataset <csv> or --synthetic <points>".into())),
        }
    }
}

#[derive(Args)]
struct SessionArgs {
    #[arg(short = 'k', long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 25.0)]
    subquery_factor: f64,
    #[arg(long, default_value_t = 3)]
    initial: usize,
    /// Do not count the initial queries toward --queries.
    #[arg(long)]
    initial_outside_budget: bool,
    #[arg(long)]
    sequential: bool,
}

impl SessionArgs {
    fn config(&self, strategy: StrategyKind, graph_kind: GraphKind, seed: u64) -> SessionConfig {
        SessionConfig {
            k: self.k,
            perplexity: self.perplexity,
            query_budget: self.queries,
            subquery_factor: self.subquery_factor,
            log_base: LogBase::Natural,
            initial_queries: self.initial,
            strategy,
            graph_kind,
            seed,
            initial_in_budget: !self.initial_outside_budget,
            execution: if self.sequential { Execution::Sequential } else { Execution::Parallel },
            ..SessionConfig::default()
        }
    }
}

fn emit<T: Serialize>(report: &T, out: Option<&PathBuf>) -> Result<(), HseError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn seed_range(first: u64, count: u64) -> Vec<u64> {
    (first..first + count).collect()
}

fn run(cli: Cli) -> Result<(), HseError> {
    match cli.command {
        Command::Run { data, session, strategy, graph, seeds, first_seed, timings, out } => {
            let report = cmd_run(&data.source()?, &session.config(strategy, graph, first_seed), &seed_range(first_seed, seeds), timings)?;
            emit(&report, out.as_ref())
        }
        Command::GraphEval { data, session, kinds, seeds, first_seed, out } => {
            let cfg = session.config(StrategyKind::EerFull, GraphKind::Perplexity, first_seed);
            let report = cmd_graph_eval(&data.source()?, &cfg, &kinds, &seed_range(first_seed, seeds))?;
            emit(&report, out.as_ref())
        }
        Command::Timing { data, session, strategies, graph, seed, out } => {
            let cfg = session.config(StrategyKind::Hse, graph, seed);
            let report = cmd_timing(&data.source()?, &cfg, &strategies)?;
            emit(&report, out.as_ref())
        }
        Command::Serve { port, host, dataset_dir, snapshot_dir } => serve(&host, port, dataset_dir, snapshot_dir),
    }
}

fn serve(host: &str, port: u16, dataset_dir: Option<PathBuf>, snapshot_dir: Option<PathBuf>) -> Result<(), HseError> {
    if let Some(dir) = &snapshot_dir {
        std::fs::create_dir_all(dir)?;
    }
    let state = Arc::new(AppState::new(dataset_dir, snapshot_dir));
    let (restored, failed) = state.restore_snapshots();
    for (path, why) in failed {
        eprintln!("skipping snapshot {}: {why}", path.display());
    }
    if !restored.is_empty() {
        eprintln!("restored {} sessions", restored.len());
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        hse_service::serve(listener, state).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
