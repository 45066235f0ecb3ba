//! Expected error under 0/1 loss and the expected risk of a candidate query.
//!
//! With the MAP decision, the expected 0/1 error of a posterior is
//! `sum_i (1 - max_c F_ic)`. The risk of querying `q` averages the error of
//! each hypothetical posterior `F^{+(q, c)}` under the current `F_q`. One
//! candidate's risk (all `C` hypotheses) is one subquery.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{HseError, Result};
use crate::exec::{self, Execution};
use crate::grf::HarmonicModel;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub candidate: usize,
    pub expected_risk: f64,
    pub per_class_risk: Vec<f64>,
    /// Lookaheads consumed, one per class.
    pub subquery_cost: usize,
}

/// `sum_i (1 - max_c F_ic)` over a row-major `N x C` posterior.
pub fn expected_error(posterior: &[f64], class_count: usize) -> Result<f64> {
    if class_count == 0 || !posterior.len().is_multiple_of(class_count) {
        return Err(HseError::Validation("posterior shape does not match class count".into()));
    }
    let mut total = 0.0;
    for (i, row) in posterior.chunks(class_count).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(HseError::Validation(format!("row {i} sums to {sum}")));
        }
        total += row_error(row);
    }
    Ok(total)
}

fn row_error(row: &[f64]) -> f64 {
    1.0 - row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Expected risk of one candidate, computed by materializing every
/// lookahead posterior. `O(N C^2)`; the fused [`RiskEvaluator`] is what the
/// strategies use.
pub fn expected_risk(model: &HarmonicModel, candidate: usize) -> Result<RiskReport> {
    let c = model.class_count();
    let per_class_risk = (0..c)
        .map(|y| expected_error(&model.lookahead(candidate, y)?, c))
        .collect::<Result<Vec<_>>>()?;
    let fq = model.posterior_row(candidate);
    let expected_risk = (0..c).map(|y| fq[y] * per_class_risk[y]).sum();
    Ok(RiskReport { candidate, expected_risk, per_class_risk, subquery_cost: c })
}

/// Scores candidates against one frozen model snapshot.
///
/// Per-row errors are precomputed once, so each candidate costs one pass over
/// the inverse column `G_{.q}` (`O(U C)`). Reports are cached by candidate;
/// the cache is tied to the model version it was built from.
pub struct RiskEvaluator<'m> {
    model: &'m HarmonicModel,
    version: u64,
    row_errors: Vec<f64>,
    total_error: f64,
    tracked_error: f64,
    /// Summed row error of the unlabeled points in each label-free component.
    free_component_error: HashMap<usize, f64>,
    cache: HashMap<usize, RiskReport>,
    subqueries: usize,
}

impl<'m> RiskEvaluator<'m> {
    pub fn new(model: &'m HarmonicModel) -> Self {
        let row_errors: Vec<f64> =
            model.posterior().chunks(model.class_count()).map(row_error).collect();
        let total_error = row_errors.iter().sum();
        let tracked_error = model.tracked_points().iter().map(|&i| row_errors[i]).sum();
        let mut free_component_error = HashMap::new();
        for i in 0..model.len() {
            if !model.is_labeled(i) && !model.component_is_labeled(i) {
                *free_component_error.entry(model.component_of(i)).or_insert(0.0) += row_errors[i];
            }
        }
        RiskEvaluator {
            model,
            version: model.version(),
            row_errors,
            total_error,
            tracked_error,
            free_component_error,
            cache: HashMap::new(),
            subqueries: 0,
        }
    }

    pub fn model_version(&self) -> u64 {
        self.version
    }

    /// Expected error of the current posterior.
    pub fn current_error(&self) -> f64 {
        self.total_error
    }

    /// Distinct candidates scored so far.
    pub fn subqueries(&self) -> usize {
        self.subqueries
    }

    pub fn cached(&self, candidate: usize) -> Option<&RiskReport> {
        self.cache.get(&candidate)
    }

    /// Computes one report without touching the cache.
    pub fn compute(&self, candidate: usize) -> Result<RiskReport> {
        let model = self.model;
        if candidate >= model.len() {
            return Err(HseError::Validation(format!("candidate {candidate} out of range")));
        }
        if model.is_labeled(candidate) {
            return Err(HseError::Conflict(format!("candidate {candidate} is already labeled")));
        }
        let c = model.class_count();
        let fq = model.posterior_row(candidate);
        let per_class_risk = if model.component_is_labeled(candidate) {
            let (alphas, s) = model.lookahead_column(candidate)?;
            let mut changed = vec![0.0; c];
            let mut shifted = vec![0.0; c];
            for (t, &i) in model.tracked_points().iter().enumerate() {
                if t == s {
                    continue;
                }
                let alpha = alphas[t];
                if alpha == 0.0 {
                    for v in &mut changed {
                        *v += self.row_errors[i];
                    }
                    continue;
                }
                // row of F^{+(q,y)} is (F_i - alpha F_q) + alpha e_y
                let fi = model.posterior_row(i);
                let (mut top, mut top_ix, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
                for k in 0..c {
                    let v = fi[k] - alpha * fq[k];
                    shifted[k] = v;
                    if v > top {
                        second = top;
                        top = v;
                        top_ix = k;
                    } else if v > second {
                        second = v;
                    }
                }
                for y in 0..c {
                    let others = if y == top_ix { second } else { top };
                    changed[y] += 1.0 - others.max(shifted[y] + alpha).min(1.0);
                }
            }
            let base = self.total_error - self.tracked_error;
            changed.iter().map(|&e| (base + e).max(0.0)).collect()
        } else {
            let comp = model.component_of(candidate);
            let err = (self.total_error - self.free_component_error[&comp]).max(0.0);
            vec![err; c]
        };
        let expected_risk = (0..c).map(|y| fq[y] * per_class_risk[y]).sum::<f64>().max(0.0);
        Ok(RiskReport { candidate, expected_risk, per_class_risk, subquery_cost: c })
    }

    /// Scores `candidates` in order, computing uncached ones as one batch.
    /// Duplicates within the batch are scored once.
    pub fn evaluate(&mut self, candidates: &[usize], exec: Execution) -> Result<Vec<RiskReport>> {
        let mut fresh: Vec<usize> = Vec::new();
        let mut queued = HashSet::new();
        for &q in candidates {
            if !self.cache.contains_key(&q) && queued.insert(q) {
                fresh.push(q);
            }
        }
        let this = &*self;
        let reports = exec::map_slice(exec, &fresh, |&q| this.compute(q));
        for r in reports {
            let r = r?;
            self.subqueries += 1;
            self.cache.insert(r.candidate, r);
        }
        Ok(candidates.iter().map(|q| self.cache[q].clone()).collect())
    }
}

/// Scores every candidate in order; the minimum risk wins, ties to the
/// earliest position.
pub fn select_min_risk(
    model: &HarmonicModel,
    candidates: &[usize],
    exec: Execution,
) -> Result<(usize, Vec<RiskReport>)> {
    if candidates.is_empty() {
        return Err(HseError::Usage("no candidates to evaluate".into()));
    }
    let mut evaluator = RiskEvaluator::new(model);
    let reports = evaluator.evaluate(candidates, exec)?;
    let winner = argmin_report(&reports).expect("non-empty");
    Ok((winner, reports))
}

/// Candidate of the first report with minimal risk.
/// `a < b` beyond rounding noise; risks within `1e-12` relative count as tied.
pub fn risk_below(a: f64, b: f64) -> bool {
    a < b - RISK_TIE_TOLERANCE * b.abs().max(1.0)
}

pub const RISK_TIE_TOLERANCE: f64 = 1e-12;

pub fn argmin_report(reports: &[RiskReport]) -> Option<usize> {
    let mut best: Option<&RiskReport> = None;
    for r in reports {
        if best.is_none_or(|b| risk_below(r.expected_risk, b.expected_risk)) {
            best = Some(r);
        }
    }
    best.map(|r| r.candidate)
}
