//! Benchmark commands behind the `hse` binary. Each command returns a
//! serializable report so the binary and tests share one code path.

use std::path::PathBuf;
use std::sync::Arc;

use hse_core::graph::GraphKind;
use hse_core::session::CurveExport;
use hse_core::synthetic::BlobSpec;
use hse_core::{run_simulated, Dataset, HseError, Result, SessionConfig, StrategyKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Where a command gets its data.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, label_column: Option<String> },
    /// Four Gaussian blobs with the given size and generator seed.
    FourGaussians { points: usize, seed: u64 },
}

impl DataSource {
    pub fn load(&self) -> Result<Arc<Dataset>> {
        let ds = match self {
            DataSource::Csv { path, label_column } => Dataset::load_csv(path, label_column.as_deref())?,
            DataSource::FourGaussians { points, seed } => {
                BlobSpec::four_gaussians(*points, *seed).generate("four_gaussians")?
            }
        };
        if ds.labels().is_none() {
            return Err(HseError::Usage(format!("dataset {:?} has no label column", ds.name())));
        }
        Ok(Arc::new(ds))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub points: usize,
    pub dim: usize,
    pub class_count: usize,
}

impl DatasetInfo {
    fn of(ds: &Dataset) -> Self {
        DatasetInfo { name: ds.name().to_string(), points: ds.len(), dim: ds.dim(), class_count: ds.class_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: StrategyKind,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: DatasetInfo,
    pub config: SessionConfig,
    pub seeds: Vec<u64>,
    pub curves: Vec<CurveExport>,
    pub summary: Summary,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one simulated session per seed, in parallel, ordered by seed.
pub fn sweep(dataset: &Arc<Dataset>, config: &SessionConfig, seeds: &[u64], timings: bool) -> Result<Vec<CurveExport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SessionConfig { seed, ..config.clone() };
            let mut curve = run_simulated(dataset.clone(), cfg)?.export(config.strategy, seed);
            if !timings {
                curve.per_query_seconds.clear();
            }
            Ok(curve)
        })
        .collect()
}

pub fn cmd_run(source: &DataSource, config: &SessionConfig, seeds: &[u64], timings: bool) -> Result<RunReport> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(HseError::Usage("at least one seed is required".into()));
    }
    let dataset = source.load()?;
    let curves = sweep(&dataset, config, seeds, timings)?;
    let aucs: Vec<f64> = curves.iter().map(|c| c.auc).collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    Ok(RunReport {
        dataset: DatasetInfo::of(&dataset),
        config: config.clone(),
        seeds: seeds.to_vec(),
        curves,
        summary: Summary { strategy: config.strategy, mean_auc, std_auc, runs: aucs.len() },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRow {
    pub graph: GraphKind,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEvalReport {
    pub dataset: DatasetInfo,
    pub strategy: StrategyKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<GraphRow>,
}

/// Full-EER learning curves for each graph construction.
pub fn cmd_graph_eval(
    source: &DataSource,
    base: &SessionConfig,
    kinds: &[GraphKind],
    seeds: &[u64],
) -> Result<GraphEvalReport> {
    base.validate()?;
    if seeds.is_empty() || kinds.is_empty() {
        return Err(HseError::Usage("need at least one seed and one graph kind".into()));
    }
    let dataset = source.load()?;
    let rows = kinds
        .iter()
        .map(|&kind| {
            let cfg = SessionConfig { graph_kind: kind, strategy: StrategyKind::EerFull, ..base.clone() };
            let aucs: Vec<f64> = sweep(&dataset, &cfg, seeds, false)?.iter().map(|c| c.auc).collect();
            let (mean_auc, std_auc) = mean_std(&aucs);
            Ok(GraphRow { graph: kind, mean_auc, std_auc, aucs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphEvalReport { dataset: DatasetInfo::of(&dataset), strategy: StrategyKind::EerFull, seeds: seeds.to_vec(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub strategy: StrategyKind,
    /// Mean selection wall time over queries picked by the strategy itself.
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub dataset: DatasetInfo,
    pub config: SessionConfig,
    pub rows: Vec<TimingRow>,
}

/// Per-query selection time for each strategy. Strategies run one after
/// another so they do not compete for cores.
pub fn cmd_timing(source: &DataSource, base: &SessionConfig, strategies: &[StrategyKind]) -> Result<TimingReport> {
    base.validate()?;
    let dataset = source.load()?;
    let rows = strategies
        .iter()
        .map(|&strategy| {
            let cfg = SessionConfig { strategy, ..base.clone() };
            let r = run_simulated(dataset.clone(), cfg)?;
            let skip = base.initial_queries.min(r.per_query_seconds.len());
            let tail = &r.per_query_seconds[skip..];
            Ok(TimingRow {
                strategy,
                mean_seconds: r.mean_strategy_seconds(base.initial_queries),
                max_seconds: tail.iter().copied().fold(0.0, f64::max),
                queries: tail.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimingReport { dataset: DatasetInfo::of(&dataset), config: base.clone(), rows })
}

/// Exit code for an error: 1 for bad input or configuration, 2 otherwise.
pub fn exit_code(e: &HseError) -> u8 {
    match e {
        HseError::Numerical(_) | HseError::Json(_) => 2,
        _ => 1,
    }
}
