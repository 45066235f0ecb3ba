//! Harmonic label propagation on a Gaussian random field.
//!
//! For unlabeled points the posterior is `F_u = (D_uu - W_uu)^{-1} W_ul Y_l`.
//! The model keeps `G = (D_uu - W_uu)^{-1}` over the unlabeled points that
//! share a connected component with at least one label. Components without a
//! label are not part of `G`; their rows are uniform. Because `G` is block
//! diagonal by component, adding a label to an already-labeled component is a
//! Schur-complement downdate of `G` (`O(U^2)`), and a single-label lookahead
//! only needs column `G_{.q}` (`O(U C)`).

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{HseError, Result};
use crate::graph::SimilarityGraph;

/// Smallest admissible lookahead pivot `G_qq`.
pub const MIN_PIVOT: f64 = 1e-14;
const CLAMP_SLACK: f64 = 1e-12;
const NONE: usize = usize::MAX;

/// Oracle-provided labels, `point -> class`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelState {
    assignments: BTreeMap<usize, usize>,
}

impl LabelState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut s = Self::new();
        for (p, c) in pairs {
            if s.assignments.insert(p, c).is_some() {
                return Err(HseError::Conflict(format!("point {p} labeled twice")));
            }
        }
        Ok(s)
    }

    pub fn get(&self, point: usize) -> Option<usize> {
        self.assignments.get(&point).copied()
    }

    pub fn contains(&self, point: usize) -> bool {
        self.assignments.contains_key(&point)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignments.iter().map(|(&p, &c)| (p, c))
    }

    /// Dense one-hot `N x C` label matrix, zero rows for unlabeled points.
    pub fn y_matrix(&self, n: usize, class_count: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * class_count];
        for (p, c) in self.iter() {
            y[p * class_count + c] = 1.0;
        }
        y
    }
}

/// Dense inverse over a subset of points, row-major, with a point->slot map.
#[derive(Debug, Clone, PartialEq)]
struct UnlabeledInverse {
    points: Vec<usize>,
    slot: Vec<usize>,
    data: Vec<f64>,
}

impl UnlabeledInverse {
    fn empty(n: usize) -> Self {
        UnlabeledInverse { points: Vec::new(), slot: vec![NONE; n], data: Vec::new() }
    }

    fn dim(&self) -> usize {
        self.points.len()
    }

    fn row(&self, s: usize) -> &[f64] {
        let m = self.dim();
        &self.data[s * m..(s + 1) * m]
    }

    /// Appends a block-diagonal block.
    fn append_block(&mut self, points: &[usize], block: &DMatrix<f64>) {
        let old = self.dim();
        let add = points.len();
        let m = old + add;
        let mut data = vec![0.0; m * m];
        for r in 0..old {
            data[r * m..r * m + old].copy_from_slice(&self.data[r * old..(r + 1) * old]);
        }
        for r in 0..add {
            for c in 0..add {
                data[(old + r) * m + old + c] = block[(r, c)];
            }
        }
        for (t, &p) in points.iter().enumerate() {
            self.slot[p] = old + t;
        }
        self.points.extend_from_slice(points);
        self.data = data;
    }

    /// Removes slot `s` via the Schur complement of the inverse:
    /// `G' = G_{-s,-s} - G_{-s,s} G_{s,-s} / G_ss`.
    fn remove(&mut self, s: usize) {
        let m = self.dim();
        let pivot = self.data[s * m + s];
        let col: Vec<f64> = (0..m).map(|r| self.data[r * m + s]).collect();
        let mut data = Vec::with_capacity((m - 1) * (m - 1));
        for r in (0..m).filter(|&r| r != s) {
            let scale = col[r] / pivot;
            let row = &self.data[r * m..(r + 1) * m];
            for c in (0..m).filter(|&c| c != s) {
                data.push(row[c] - scale * self.data[s * m + c]);
            }
        }
        let removed = self.points.remove(s);
        self.slot[removed] = NONE;
        for t in s..self.points.len() {
            self.slot[self.points[t]] = t;
        }
        self.data = data;
    }
}

#[derive(Debug, Clone)]
pub struct HarmonicModel {
    graph: Arc<SimilarityGraph>,
    class_count: usize,
    labels: LabelState,
    /// Row-major `N x C`.
    posterior: Vec<f64>,
    components: Vec<usize>,
    component_labeled: Vec<bool>,
    inverse: UnlabeledInverse,
    regularization: f64,
    version: u64,
}

impl HarmonicModel {
    /// Solves the harmonic system from scratch.
    pub fn solve(graph: Arc<SimilarityGraph>, class_count: usize, labels: LabelState) -> Result<Self> {
        let n = graph.len();
        if class_count < 2 {
            return Err(HseError::Validation("class count must be at least 2".into()));
        }
        for (p, c) in labels.iter() {
            if p >= n || c >= class_count {
                return Err(HseError::Validation(format!("label ({p}, {c}) out of range")));
            }
        }
        let components = graph.components();
        let comp_count = components.iter().copied().max().map_or(0, |m| m + 1);
        let mut component_labeled = vec![false; comp_count];
        for (p, _) in labels.iter() {
            component_labeled[components[p]] = true;
        }
        let mean_degree = (0..n).map(|i| graph.degree(i)).sum::<f64>() / n.max(1) as f64;
        let mut model = HarmonicModel {
            posterior: vec![1.0 / class_count as f64; n * class_count],
            graph,
            class_count,
            labels,
            components,
            component_labeled,
            inverse: UnlabeledInverse::empty(n),
            regularization: 1e-9 * mean_degree,
            version: 0,
        };
        for (p, c) in model.labels.iter().collect::<Vec<_>>() {
            model.set_one_hot(p, c);
        }
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); comp_count];
        for i in 0..n {
            if !model.labels.contains(i) && model.component_labeled[model.components[i]] {
                blocks[model.components[i]].push(i);
            }
        }
        for (comp, points) in blocks.iter().enumerate() {
            if points.is_empty() {
                continue;
            }
            let block = model.invert_block(points, comp)?;
            model.inverse.append_block(points, &block);
        }
        // F_u = G W_ul Y_l
        let c = class_count;
        let m = model.inverse.dim();
        let mut rhs = vec![0.0; m * c];
        for (t, &i) in model.inverse.points.iter().enumerate() {
            for &(j, w) in model.graph.neighbors(i) {
                if let Some(y) = model.labels.get(j) {
                    rhs[t * c + y] += w;
                }
            }
        }
        for t in 0..m {
            let row = model.inverse.row(t);
            let mut out = vec![0.0; c];
            for (u, &g) in row.iter().enumerate() {
                if g != 0.0 {
                    for k in 0..c {
                        out[k] += g * rhs[u * c + k];
                    }
                }
            }
            let i = model.inverse.points[t];
            model.posterior[i * c..(i + 1) * c].copy_from_slice(&out);
            clamp_row(&mut model.posterior[i * c..(i + 1) * c]);
        }
        Ok(model)
    }

    /// `(D_uu - W_uu)^{-1}` for one component's unlabeled points. The block
    /// is positive definite when the component holds a label; the
    /// regularized retry only triggers on numerically singular blocks.
    fn invert_block(&self, points: &[usize], comp: usize) -> Result<DMatrix<f64>> {
        let m = points.len();
        let mut local = vec![NONE; self.graph.len()];
        for (t, &p) in points.iter().enumerate() {
            local[p] = t;
        }
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (t, &p) in points.iter().enumerate() {
            a[(t, t)] = self.graph.degree(p);
            for &(j, w) in self.graph.neighbors(p) {
                if local[j] != NONE {
                    a[(t, local[j])] -= w;
                }
            }
        }
        if let Some(ch) = a.clone().cholesky() {
            return Ok(ch.inverse());
        }
        for t in 0..m {
            a[(t, t)] += self.regularization;
        }
        a.cholesky().map(|ch| ch.inverse()).ok_or_else(|| {
            HseError::Numerical(format!(
                "singular harmonic system in component {comp} ({m} unlabeled points)"
            ))
        })
    }

    fn set_one_hot(&mut self, point: usize, class: usize) {
        let c = self.class_count;
        let row = &mut self.posterior[point * c..(point + 1) * c];
        row.fill(0.0);
        row[class] = 1.0;
    }

    fn check_candidate(&self, point: usize, class: usize) -> Result<()> {
        if point >= self.len() {
            return Err(HseError::Validation(format!("point {point} out of range")));
        }
        if class >= self.class_count {
            return Err(HseError::Validation(format!(
                "class {class} outside [0, {})",
                self.class_count
            )));
        }
        if self.labels.contains(point) {
            return Err(HseError::Conflict(format!("point {point} is already labeled")));
        }
        Ok(())
    }

    /// Moves `point` to the labeled set, updating `F` and `G` in place.
    pub fn add_label(&mut self, point: usize, class: usize) -> Result<()> {
        self.check_candidate(point, class)?;
        let c = self.class_count;
        let comp = self.components[point];
        if self.component_labeled[comp] {
            let s = self.inverse.slot[point];
            let m = self.inverse.dim();
            let pivot = self.inverse.data[s * m + s];
            if pivot <= MIN_PIVOT {
                return Err(HseError::Numerical(format!("degenerate pivot {pivot:e} at point {point}")));
            }
            let mut delta = self.posterior[point * c..(point + 1) * c].to_vec();
            for v in &mut delta {
                *v = -*v;
            }
            delta[class] += 1.0;
            for t in 0..m {
                let g = self.inverse.data[t * m + s];
                if t == s || g == 0.0 {
                    continue;
                }
                let alpha = g / pivot;
                let i = self.inverse.points[t];
                let row = &mut self.posterior[i * c..(i + 1) * c];
                for k in 0..c {
                    row[k] += alpha * delta[k];
                }
                clamp_row(row);
            }
            self.inverse.remove(s);
        } else {
            self.component_labeled[comp] = true;
            let rest: Vec<usize> = (0..self.len())
                .filter(|&i| i != point && self.components[i] == comp && !self.labels.contains(i))
                .collect();
            for &i in &rest {
                self.set_one_hot(i, class);
            }
            if !rest.is_empty() {
                let block = self.invert_block(&rest, comp)?;
                self.inverse.append_block(&rest, &block);
            }
        }
        self.set_one_hot(point, class);
        self.labels.assignments.insert(point, class);
        self.version += 1;
        Ok(())
    }

    /// The posterior `add_label(point, class)` would produce, leaving `self`
    /// untouched.
    pub fn lookahead(&self, point: usize, class: usize) -> Result<Vec<f64>> {
        self.check_candidate(point, class)?;
        let c = self.class_count;
        let mut out = self.posterior.clone();
        let comp = self.components[point];
        if self.component_labeled[comp] {
            let (alphas, _) = self.lookahead_column(point)?;
            let mut delta: Vec<f64> = self.posterior_row(point).iter().map(|v| -v).collect();
            delta[class] += 1.0;
            for (t, &alpha) in alphas.iter().enumerate() {
                if alpha == 0.0 {
                    continue;
                }
                let i = self.inverse.points[t];
                let row = &mut out[i * c..(i + 1) * c];
                for k in 0..c {
                    row[k] += alpha * delta[k];
                }
                clamp_row(row);
            }
        } else {
            for i in 0..self.len() {
                if self.components[i] == comp && !self.labels.contains(i) {
                    let row = &mut out[i * c..(i + 1) * c];
                    row.fill(0.0);
                    row[class] = 1.0;
                }
            }
        }
        let row = &mut out[point * c..(point + 1) * c];
        row.fill(0.0);
        row[class] = 1.0;
        Ok(out)
    }

    /// `G_{tq} / G_qq` for every slot `t` of the inverse (zero outside the
    /// candidate's component), plus the candidate's slot.
    pub(crate) fn lookahead_column(&self, point: usize) -> Result<(Vec<f64>, usize)> {
        let s = self.inverse.slot[point];
        debug_assert_ne!(s, NONE);
        let row = self.inverse.row(s);
        let pivot = row[s];
        if pivot <= MIN_PIVOT {
            return Err(HseError::Numerical(format!("degenerate pivot {pivot:e} at point {point}")));
        }
        Ok((row.iter().map(|g| g / pivot).collect(), s))
    }

    /// Unlabeled points currently tracked by the inverse, in slot order.
    pub(crate) fn tracked_points(&self) -> &[usize] {
        &self.inverse.points
    }

    pub(crate) fn component_is_labeled(&self, point: usize) -> bool {
        self.component_labeled[self.components[point]]
    }

    pub(crate) fn component_of(&self, point: usize) -> usize {
        self.components[point]
    }

    pub fn graph(&self) -> &Arc<SimilarityGraph> {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &LabelState {
        &self.labels
    }

    pub fn is_labeled(&self, point: usize) -> bool {
        self.labels.contains(point)
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labels.contains(i)).collect()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.len() - self.labels.len()
    }

    /// Row-major `N x C` posterior.
    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn posterior_row(&self, point: usize) -> &[f64] {
        &self.posterior[point * self.class_count..(point + 1) * self.class_count]
    }

    /// Incremented by every `add_label`.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of unlabeled points covered by `G`.
    pub fn inverse_dim(&self) -> usize {
        self.inverse.dim()
    }

    /// Hash over labels, posterior bits and `G` bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.labels.assignments.hash(&mut h);
        for v in self.posterior.iter().chain(&self.inverse.data) {
            v.to_bits().hash(&mut h);
        }
        self.inverse.points.hash(&mut h);
        h.finish()
    }
}

/// Convenience wrapper over [`HarmonicModel::solve`].
pub fn solve_harmonic(
    graph: Arc<SimilarityGraph>,
    class_count: usize,
    labels: LabelState,
) -> Result<HarmonicModel> {
    HarmonicModel::solve(graph, class_count, labels)
}

fn clamp_row(row: &mut [f64]) {
    for v in row {
        if *v < 0.0 && *v >= -CLAMP_SLACK {
            *v = 0.0;
        } else if *v > 1.0 && *v <= 1.0 + CLAMP_SLACK {
            *v = 1.0;
        }
    }
}

/// MAP class of one posterior row, ties to the lowest class id.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// MAP class per point.
pub fn predict(model: &HarmonicModel) -> Vec<usize> {
    model.posterior.chunks(model.class_count).map(argmax_row).collect()
}
