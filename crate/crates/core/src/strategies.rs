//! Query selection strategies.
//!
//! `random`, `margin` and `entropy` are the usual pointwise baselines. The
//! expected-error-reduction family differs only in which candidates get a
//! subquery: all of them (`eer_full`), a random subset (`eer_random_subsample`),
//! a coarse-to-fine sweep of the cluster tree (`eer_breadth_first`), or an
//! adaptive walk down the tree guided by the risks seen so far (`hse`).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eer::{argmin_report, risk_below, RiskEvaluator, RiskReport};
use crate::error::{HseError, Result};
use crate::exec::Execution;
use crate::grf::HarmonicModel;
use crate::hierarchy::ClusterTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[serde(alias = "rand")]
    Random,
    Margin,
    Entropy,
    #[serde(alias = "full", alias = "zhu")]
    EerFull,
    #[serde(alias = "rands")]
    EerRandomSubsample,
    #[serde(alias = "bfirst")]
    EerBreadthFirst,
    Hse,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Margin,
        StrategyKind::Entropy,
        StrategyKind::EerFull,
        StrategyKind::EerRandomSubsample,
        StrategyKind::EerBreadthFirst,
        StrategyKind::Hse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Margin => "margin",
            StrategyKind::Entropy => "entropy",
            StrategyKind::EerFull => "eer_full",
            StrategyKind::EerRandomSubsample => "eer_random_subsample",
            StrategyKind::EerBreadthFirst => "eer_breadth_first",
            StrategyKind::Hse => "hse",
        }
    }

    pub fn needs_tree(self) -> bool {
        matches!(self, StrategyKind::EerBreadthFirst | StrategyKind::Hse)
    }

    pub fn is_deterministic(self) -> bool {
        !matches!(self, StrategyKind::Random | StrategyKind::EerRandomSubsample)
    }
}

impl FromStr for StrategyKind {
    type Err = HseError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" | "rand" => StrategyKind::Random,
            "margin" => StrategyKind::Margin,
            "entropy" => StrategyKind::Entropy,
            "eer_full" | "full" | "zhu" => StrategyKind::EerFull,
            "eer_random_subsample" | "rands" => StrategyKind::EerRandomSubsample,
            "eer_breadth_first" | "bfirst" => StrategyKind::EerBreadthFirst,
            "hse" => StrategyKind::Hse,
            other => return Err(HseError::Config(format!("unknown strategy {other:?}"))),
        })
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Base of the logarithm in the `factor * log N` subquery budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

/// `ceil(factor * log N)`, at least 1.
pub fn subquery_budget(n: usize, factor: f64, base: LogBase) -> usize {
    let x = n.max(1) as f64;
    let log = match base {
        LogBase::Natural => x.ln(),
        LogBase::Two => x.log2(),
        LogBase::Ten => x.log10(),
    };
    ((factor * log).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub subquery_budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub chosen: usize,
    /// `(point, expected risk)` in evaluation order.
    pub evaluated: Vec<(usize, f64)>,
    pub subqueries_used: usize,
}

impl SelectionTrace {
    fn pointwise(chosen: usize) -> Self {
        SelectionTrace { chosen, evaluated: Vec::new(), subqueries_used: 0 }
    }

    fn from_reports(reports: &[RiskReport]) -> Result<Self> {
        let chosen = argmin_report(reports).ok_or(HseError::PoolExhausted)?;
        Ok(SelectionTrace {
            chosen,
            evaluated: reports.iter().map(|r| (r.candidate, r.expected_risk)).collect(),
            subqueries_used: reports.len(),
        })
    }
}

pub fn select_random<R: Rng + ?Sized>(unlabeled: &[usize], rng: &mut R) -> Result<usize> {
    if unlabeled.is_empty() {
        return Err(HseError::Usage("cannot draw from an empty pool".into()));
    }
    Ok(unlabeled[rng.random_range(0..unlabeled.len())])
}

/// Smallest gap between the two largest posterior entries.
pub fn select_margin(model: &HarmonicModel) -> Result<usize> {
    best_unlabeled(model, |row| {
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &v in row {
            if v > a {
                b = a;
                a = v;
            } else if v > b {
                b = v;
            }
        }
        a - b
    })
}

/// Largest Shannon entropy, `0 ln 0 = 0`.
pub fn select_entropy(model: &HarmonicModel) -> Result<usize> {
    best_unlabeled(model, |row| row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum())
}

/// Unlabeled point minimizing `score`, ties to the lowest id.
fn best_unlabeled(model: &HarmonicModel, score: impl Fn(&[f64]) -> f64) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..model.len() {
        if model.is_labeled(i) {
            continue;
        }
        let s = score(model.posterior_row(i));
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| HseError::Usage("no unlabeled points".into()))
}

pub fn select_eer_full(model: &HarmonicModel, exec: Execution) -> Result<SelectionTrace> {
    let candidates = model.unlabeled();
    let reports = RiskEvaluator::new(model).evaluate(&candidates, exec)?;
    SelectionTrace::from_reports(&reports)
}

pub fn select_eer_random_subsample<R: Rng + ?Sized>(
    model: &HarmonicModel,
    budget: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<SelectionTrace> {
    let unlabeled = model.unlabeled();
    let amount = budget.max(1).min(unlabeled.len());
    let candidates: Vec<usize> =
        rand::seq::index::sample(rng, unlabeled.len(), amount).into_iter().map(|k| unlabeled[k]).collect();
    let reports = RiskEvaluator::new(model).evaluate(&candidates, exec)?;
    SelectionTrace::from_reports(&reports)
}

/// Scores tree representatives in linearization order until the budget runs out.
pub fn select_eer_breadth_first(
    model: &HarmonicModel,
    tree: &ClusterTree,
    budget: usize,
    exec: Execution,
) -> Result<SelectionTrace> {
    let mut candidates = Vec::new();
    let mut seen = vec![false; model.len()];
    for &id in tree.linearization() {
        if candidates.len() >= budget.max(1) {
            break;
        }
        let rep = tree.node(id).representative;
        if !model.is_labeled(rep) && !seen[rep] {
            seen[rep] = true;
            candidates.push(rep);
        }
    }
    let reports = RiskEvaluator::new(model).evaluate(&candidates, exec)?;
    SelectionTrace::from_reports(&reports)
}

/// Hierarchical subquery evaluation.
///
/// With no labels the root representative is returned without scoring. Otherwise
/// the active set starts as the root plus the children of every node whose
/// representative is labeled. Active members are scored in priority order, then
/// the lowest-risk member that has not been expanded yet gets its children
/// added and scored, until the budget is spent or nothing is expandable.
pub fn select_hse(
    model: &HarmonicModel,
    tree: &ClusterTree,
    budget: usize,
    exec: Execution,
) -> Result<SelectionTrace> {
    if model.unlabeled_count() == 0 {
        return Err(HseError::PoolExhausted);
    }
    if model.labels().is_empty() {
        return Ok(SelectionTrace::pointwise(tree.root().representative));
    }
    let budget = budget.max(1);
    let node_count = tree.nodes().len();
    let mut in_active = vec![false; node_count];
    let mut seed: Vec<usize> = vec![tree.root_id()];
    for (point, _) in model.labels().iter() {
        for node in tree.represented_by(point) {
            seed.extend(&node.children);
        }
    }
    let mut search = HseSearch {
        model,
        tree,
        evaluator: RiskEvaluator::new(model),
        risks: vec![f64::NAN; model.len()],
        order: Vec::new(),
        frontier: BinaryHeap::new(),
        budget,
        exec,
    };
    let batch = admit(&mut seed, &mut in_active, tree);
    search.score(&batch)?;

    // each active node enters the frontier once, when its representative is
    // scored; popping it expands it
    while search.order.len() < budget {
        let Some(Reverse((_, id))) = search.frontier.pop() else { break };
        let mut children = tree.node(id).children.clone();
        let batch = admit(&mut children, &mut in_active, tree);
        search.score(&batch)?;
    }

    let evaluated: Vec<(usize, f64)> = search.order.iter().map(|&p| (p, search.risks[p])).collect();
    let mut chosen: Option<(usize, f64)> = None;
    for &(p, r) in &evaluated {
        if chosen.is_none_or(|(_, b)| risk_below(r, b)) {
            chosen = Some((p, r));
        }
    }
    let (chosen, _) = chosen.ok_or(HseError::PoolExhausted)?;
    Ok(SelectionTrace { chosen, subqueries_used: evaluated.len(), evaluated })
}

/// Adds the not-yet-active nodes to the active set; returns them in priority order.
fn admit(
    nodes: &mut Vec<usize>,
    in_active: &mut [bool],
    tree: &ClusterTree,
) -> Vec<usize> {
    nodes.sort_by_key(|&id| tree.rank(id));
    nodes.dedup();
    let mut added = Vec::new();
    for &id in nodes.iter() {
        if !in_active[id] {
            in_active[id] = true;
            added.push(id);
        }
    }
    added
}

/// Expansion order: lower risk first, then linearization rank.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FrontierKey(f64, usize);

impl Eq for FrontierKey {}

impl PartialOrd for FrontierKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FrontierKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

struct HseSearch<'a> {
    model: &'a HarmonicModel,
    tree: &'a ClusterTree,
    evaluator: RiskEvaluator<'a>,
    /// Risk per point, NaN until scored.
    risks: Vec<f64>,
    order: Vec<usize>,
    frontier: BinaryHeap<Reverse<(FrontierKey, usize)>>,
    budget: usize,
    exec: Execution,
}

impl HseSearch<'_> {
    /// Scores the unlabeled, unscored representatives of `nodes` (already in
    /// priority order) as one batch, truncated to the remaining budget. Nodes
    /// whose representative ends up scored join the expansion frontier.
    fn score(&mut self, nodes: &[usize]) -> Result<()> {
        let mut batch: Vec<usize> = Vec::new();
        for &id in nodes {
            if self.order.len() + batch.len() >= self.budget {
                break;
            }
            let rep = self.tree.node(id).representative;
            if !self.model.is_labeled(rep) && self.risks[rep].is_nan() && !batch.contains(&rep) {
                batch.push(rep);
            }
        }
        for r in self.evaluator.evaluate(&batch, self.exec)? {
            self.risks[r.candidate] = r.expected_risk;
            self.order.push(r.candidate);
        }
        for &id in nodes {
            let node = self.tree.node(id);
            let risk = self.risks[node.representative];
            if !node.children.is_empty() && !risk.is_nan() && !self.model.is_labeled(node.representative) {
                self.frontier.push(Reverse((FrontierKey(risk, self.tree.rank(id)), id)));
            }
        }
        Ok(())
    }
}

/// Dispatches one selection for `config` against the current model.
pub fn select<R: Rng + ?Sized>(
    config: &StrategyConfig,
    model: &HarmonicModel,
    tree: Option<&ClusterTree>,
    rng: &mut R,
    exec: Execution,
) -> Result<SelectionTrace> {
    if model.unlabeled_count() == 0 {
        return Err(HseError::PoolExhausted);
    }
    let need_tree = || {
        tree.ok_or_else(|| HseError::Config(format!("strategy {} needs a cluster tree", config.kind)))
    };
    match config.kind {
        StrategyKind::Random => Ok(SelectionTrace::pointwise(select_random(&model.unlabeled(), rng)?)),
        StrategyKind::Margin => Ok(SelectionTrace::pointwise(select_margin(model)?)),
        StrategyKind::Entropy => Ok(SelectionTrace::pointwise(select_entropy(model)?)),
        StrategyKind::EerFull => select_eer_full(model, exec),
        StrategyKind::EerRandomSubsample => {
            select_eer_random_subsample(model, config.subquery_budget, rng, exec)
        }
        StrategyKind::EerBreadthFirst => {
            select_eer_breadth_first(model, need_tree()?, config.subquery_budget, exec)
        }
        StrategyKind::Hse => select_hse(model, need_tree()?, config.subquery_budget, exec),
    }
}
