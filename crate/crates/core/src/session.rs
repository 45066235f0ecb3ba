//! The active-learning loop: initial queries, oracle answers, incremental model
//! updates and learning-curve bookkeeping.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{HseError, Result};
use crate::exec::Execution;
use crate::graph::{build_graph, CalibrationOrder, GraphKind, GraphParams, SimilarityGraph};
use crate::grf::{argmax_row, HarmonicModel, LabelState};
use crate::hierarchy::{build_hierarchy_with, ClusterTree};
use crate::strategies::{self, subquery_budget, LogBase, SelectionTrace, StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub k: usize,
    pub perplexity: f64,
    pub query_budget: usize,
    pub subquery_factor: f64,
    pub log_base: LogBase,
    pub initial_queries: usize,
    pub strategy: StrategyKind,
    pub graph_kind: GraphKind,
    pub seed: u64,
    pub calibration: CalibrationOrder,
    /// When false the initial queries are answered on top of `query_budget`.
    pub initial_in_budget: bool,
    pub execution: Execution,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            k: 10,
            perplexity: 30.0,
            query_budget: 50,
            subquery_factor: 25.0,
            log_base: LogBase::Natural,
            initial_queries: 3,
            strategy: StrategyKind::Hse,
            graph_kind: GraphKind::Perplexity,
            seed: 0,
            calibration: CalibrationOrder::BeforeSparsify,
            initial_in_budget: true,
            execution: Execution::Parallel,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HseError::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.query_budget == 0 {
            return bad("query_budget must be at least 1");
        }
        if self.initial_queries == 0 {
            return bad("initial_queries must be at least 1");
        }
        if !(self.subquery_factor.is_finite() && self.subquery_factor > 0.0) {
            return bad("subquery_factor must be positive");
        }
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return bad("perplexity must be positive");
        }
        Ok(())
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            kind: self.graph_kind,
            k: self.k,
            perplexity: self.perplexity,
            calibration: self.calibration,
            exec: self.execution,
        }
    }

    /// Oracle answers the session accepts before completing.
    pub fn total_queries(&self) -> usize {
        if self.initial_in_budget {
            self.query_budget
        } else {
            self.query_budget + self.initial_queries
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub accuracies: Vec<f64>,
    pub auc: f64,
}

impl LearningCurve {
    pub fn push(&mut self, accuracy: f64) {
        self.accuracies.push(accuracy);
        self.auc = self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64;
    }
}

/// Mean of the per-query accuracies.
pub fn auc(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(HseError::Usage("area under an empty learning curve".into()));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingLabel,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub point: usize,
    pub class: usize,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub initial: bool,
}

/// The query currently awaiting an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedQuery {
    pub point: usize,
    pub initial: bool,
    pub trace: SelectionTrace,
    pub selection_seconds: f64,
}

pub struct ActiveSession {
    dataset: Arc<Dataset>,
    graph: Arc<SimilarityGraph>,
    model: HarmonicModel,
    tree: Option<ClusterTree>,
    config: SessionConfig,
    strategy: StrategyConfig,
    rng: ChaCha8Rng,
    pending_initial: VecDeque<usize>,
    issued: Option<IssuedQuery>,
    query_log: Vec<QueryRecord>,
    selection_seconds: Vec<f64>,
    curve: LearningCurve,
    status: SessionStatus,
}

impl ActiveSession {
    pub fn start(dataset: Arc<Dataset>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let n = dataset.len();
        if config.k >= n {
            return Err(HseError::Config(format!("k = {} needs more than {n} points", config.k)));
        }
        let graph = Arc::new(build_graph(&dataset, &config.graph_params())?);
        let tree = config.strategy.needs_tree().then(|| build_hierarchy_with(&graph, config.execution));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let count = config.initial_queries.min(n).min(config.total_queries());
        let pending_initial: VecDeque<usize> = match (&tree, config.strategy) {
            (Some(t), StrategyKind::Hse) => t.leading_representatives(count).into(),
            _ => rand::seq::index::sample(&mut rng, n, count).into_iter().collect(),
        };
        let model = HarmonicModel::solve(graph.clone(), dataset.class_count(), LabelState::new())?;
        let strategy = StrategyConfig {
            kind: config.strategy,
            subquery_budget: subquery_budget(n, config.subquery_factor, config.log_base),
            seed: config.seed,
        };
        Ok(ActiveSession {
            dataset,
            graph,
            model,
            tree,
            config,
            strategy,
            rng,
            pending_initial,
            issued: None,
            query_log: Vec::new(),
            selection_seconds: Vec::new(),
            curve: LearningCurve::default(),
            status: SessionStatus::AwaitingLabel,
        })
    }

    /// The point to label next. Repeated calls return the same query until it
    /// is answered.
    pub fn next_query(&mut self) -> Result<usize> {
        if let Some(q) = &self.issued {
            return Ok(q.point);
        }
        if self.status == SessionStatus::Complete {
            return Err(HseError::SessionComplete);
        }
        if self.model.unlabeled_count() == 0 {
            self.status = SessionStatus::Complete;
            return Err(HseError::PoolExhausted);
        }
        let started = Instant::now();
        while self.pending_initial.front().is_some_and(|&p| self.model.is_labeled(p)) {
            self.pending_initial.pop_front();
        }
        let (trace, initial) = match self.pending_initial.pop_front() {
            Some(p) => (SelectionTrace { chosen: p, evaluated: Vec::new(), subqueries_used: 0 }, true),
            None => {
                let trace = strategies::select(
                    &self.strategy,
                    &self.model,
                    self.tree.as_ref(),
                    &mut self.rng,
                    self.config.execution,
                )?;
                (trace, false)
            }
        };
        let point = trace.chosen;
        self.issued =
            Some(IssuedQuery { point, initial, trace, selection_seconds: started.elapsed().as_secs_f64() });
        Ok(point)
    }

    pub fn submit_label(&mut self, point: usize, class: usize) -> Result<()> {
        if self.status == SessionStatus::Complete {
            return Err(HseError::SessionComplete);
        }
        if point >= self.model.len() {
            return Err(HseError::Validation(format!("point {point} out of range")));
        }
        if class >= self.model.class_count() {
            return Err(HseError::Validation(format!(
                "class {class} out of range for {} classes",
                self.model.class_count()
            )));
        }
        if self.model.is_labeled(point) {
            return Err(HseError::Conflict(format!("point {point} is already labeled")));
        }
        let issued = match &self.issued {
            Some(q) if q.point == point => self.issued.take().expect("checked"),
            other => return Err(HseError::OutOfOrder { expected: other.as_ref().map(|q| q.point), got: point }),
        };
        self.model.add_label(point, class)?;
        self.query_log.push(QueryRecord { point, class, timestamp: unix_now(), initial: issued.initial });
        self.selection_seconds.push(issued.selection_seconds);
        if let Some(truth) = self.dataset.labels() {
            self.curve.push(unlabeled_accuracy(&self.model, truth));
        }
        if self.query_log.len() >= self.config.total_queries() || self.model.unlabeled_count() == 0 {
            self.status = SessionStatus::Complete;
        }
        Ok(())
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn graph(&self) -> &Arc<SimilarityGraph> {
        &self.graph
    }

    pub fn model(&self) -> &HarmonicModel {
        &self.model
    }

    pub fn tree(&self) -> Option<&ClusterTree> {
        self.tree.as_ref()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn issued(&self) -> Option<&IssuedQuery> {
        self.issued.as_ref()
    }

    pub fn query_log(&self) -> &[QueryRecord] {
        &self.query_log
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    /// Selection wall time of every answered query.
    pub fn selection_seconds(&self) -> &[f64] {
        &self.selection_seconds
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn answered(&self) -> usize {
        self.query_log.len()
    }

    pub fn curve_export(&self) -> CurveExport {
        CurveExport {
            strategy: self.config.strategy,
            seed: self.config.seed,
            accuracies: self.curve.accuracies.clone(),
            auc: self.curve.auc,
            per_query_seconds: self.selection_seconds.clone(),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            config: self.config.clone(),
            dataset: self.dataset.name().to_string(),
            query_log: self.query_log.clone(),
            selection_seconds: self.selection_seconds.clone(),
        }
    }

    /// Rebuilds a session by replaying the logged answers through the same
    /// selection sequence.
    pub fn restore(dataset: Arc<Dataset>, snapshot: &SessionSnapshot) -> Result<Self> {
        let mut session = ActiveSession::start(dataset, snapshot.config.clone())?;
        for record in &snapshot.query_log {
            let point = session.next_query()?;
            if point != record.point {
                return Err(HseError::Validation(format!(
                    "snapshot diverges: expected query {}, replay issued {point}",
                    record.point
                )));
            }
            session.submit_label(record.point, record.class)?;
        }
        session.query_log = snapshot.query_log.clone();
        if snapshot.selection_seconds.len() == session.selection_seconds.len() {
            session.selection_seconds = snapshot.selection_seconds.clone();
        }
        Ok(session)
    }
}

pub fn start_session(dataset: Arc<Dataset>, config: SessionConfig) -> Result<ActiveSession> {
    ActiveSession::start(dataset, config)
}

/// Fraction of unlabeled points whose MAP class matches the truth; 1 when
/// nothing is left unlabeled.
pub fn unlabeled_accuracy(model: &HarmonicModel, truth: &[usize]) -> f64 {
    let unlabeled = model.unlabeled();
    if unlabeled.is_empty() {
        return 1.0;
    }
    let hits = unlabeled.iter().filter(|&&i| argmax_row(model.posterior_row(i)) == truth[i]).count();
    hits as f64 / unlabeled.len() as f64
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub accuracies: Vec<f64>,
    pub auc: f64,
    pub per_query_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub config: SessionConfig,
    pub dataset: String,
    pub query_log: Vec<QueryRecord>,
    pub selection_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub curve: LearningCurve,
    pub per_query_seconds: Vec<f64>,
    pub queries: Vec<usize>,
    pub subqueries: Vec<usize>,
}

impl SimulationResult {
    pub fn export(&self, strategy: StrategyKind, seed: u64) -> CurveExport {
        CurveExport {
            strategy,
            seed,
            accuracies: self.curve.accuracies.clone(),
            auc: self.curve.auc,
            per_query_seconds: self.per_query_seconds.clone(),
        }
    }

    /// Mean selection time over the queries chosen by the strategy itself.
    pub fn mean_strategy_seconds(&self, initial: usize) -> f64 {
        let tail = &self.per_query_seconds[initial.min(self.per_query_seconds.len())..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

/// Runs a full session answering every query with the ground truth.
pub fn run_simulated(dataset: Arc<Dataset>, config: SessionConfig) -> Result<SimulationResult> {
    let Some(truth) = dataset.labels().map(<[usize]>::to_vec) else {
        return Err(HseError::Usage("simulation needs ground-truth labels".into()));
    };
    let mut session = ActiveSession::start(dataset, config)?;
    let mut queries = Vec::new();
    let mut subqueries = Vec::new();
    loop {
        let point = match session.next_query() {
            Ok(p) => p,
            Err(HseError::SessionComplete | HseError::PoolExhausted) => break,
            Err(e) => return Err(e),
        };
        subqueries.push(session.issued().map_or(0, |q| q.trace.subqueries_used));
        session.submit_label(point, truth[point])?;
        queries.push(point);
    }
    Ok(SimulationResult {
        curve: session.curve.clone(),
        per_query_seconds: session.selection_seconds.clone(),
        queries,
        subqueries,
    })
}
