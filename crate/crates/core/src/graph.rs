//! Sparse similarity graphs over a dataset.
//!
//! The default construction calibrates one RBF bandwidth per node so that the
//! node's neighbor distribution has a target perplexity, keeps the union of
//! the kNN edge sets and symmetrizes the conditionals,
//! `w_ij = (p_{j|i} + p_{i|j}) / 2`. The `mean`, `binary` and `knn` kinds are
//! the classic baselines on the same support.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{HseError, Result};
use crate::exec::{self, Execution};

/// Tolerance on `log2(perplexity)` for the bandwidth search.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;
/// Bisection steps once the target is bracketed.
pub const MAX_BISECTION_STEPS: usize = 64;
const MAX_BRACKET_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    #[default]
    Perplexity,
    Mean,
    Binary,
    Knn,
}

impl GraphKind {
    pub const ALL: [GraphKind; 4] =
        [GraphKind::Mean, GraphKind::Binary, GraphKind::Knn, GraphKind::Perplexity];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Perplexity => "perplexity",
            GraphKind::Mean => "mean",
            GraphKind::Binary => "binary",
            GraphKind::Knn => "knn",
        }
    }
}

impl FromStr for GraphKind {
    type Err = HseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perplexity" | "per" => Ok(GraphKind::Perplexity),
            "mean" => Ok(GraphKind::Mean),
            "binary" => Ok(GraphKind::Binary),
            "knn" => Ok(GraphKind::Knn),
            other => Err(HseError::Config(format!("unknown graph kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether bandwidths are calibrated against all other points or only the
/// kNN candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationOrder {
    #[default]
    BeforeSparsify,
    AfterSparsify,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub gamma: f64,
    pub log2_perplexity: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    k: usize,
    kind: Option<GraphKind>,
    perplexity_target: Option<f64>,
    gammas: Vec<f64>,
    /// Per-node `(neighbor, weight)` sorted by neighbor id.
    adjacency: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
    flagged: Vec<usize>,
}

impl SimilarityGraph {
    /// Builds a graph from explicit undirected edges. Duplicate edges are
    /// rejected; gammas are set to 1.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(HseError::Validation(format!("invalid edge ({i}, {j}) for n={n}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(HseError::Validation(format!("invalid weight {w} on ({i}, {j})")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(HseError::Validation(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        Ok(Self::assemble(n, 0, None, None, vec![1.0; n], adjacency, Vec::new()))
    }

    fn assemble(
        n: usize,
        k: usize,
        kind: Option<GraphKind>,
        perplexity_target: Option<f64>,
        gammas: Vec<f64>,
        mut adjacency: Vec<Vec<(usize, f64)>>,
        flagged: Vec<usize>,
    ) -> Self {
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        let degrees = adjacency.iter().map(|row| row.iter().map(|&(_, w)| w).sum()).collect();
        SimilarityGraph { n, k, kind, perplexity_target, gammas, adjacency, degrees, flagged }
    }

    fn from_union_edges(
        n: usize,
        k: usize,
        kind: GraphKind,
        perplexity_target: Option<f64>,
        gammas: Vec<f64>,
        edges: &[(usize, usize)],
        weight: impl Fn(usize, usize) -> f64,
        flagged: Vec<usize>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            let w = weight(i, j);
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        Self::assemble(n, k, Some(kind), perplexity_target, gammas, adjacency, flagged)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> Option<GraphKind> {
        self.kind
    }

    pub fn perplexity_target(&self) -> Option<f64> {
        self.perplexity_target
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Nodes whose bandwidth search did not converge.
    pub fn flagged(&self) -> &[usize] {
        &self.flagged
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = &self.adjacency[i];
        row.binary_search_by_key(&j, |&(v, _)| v).map_or(0.0, |p| row[p].1)
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter().filter(move |&&(j, _)| j > i).map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Connected component id per node, counting only edges with `w > 0`.
    /// Components are numbered in order of their smallest node.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, w) in &self.adjacency[u] {
                    if w > 0.0 && comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// JSON export: `{n, edges: [[i, j, w], ...], gammas: [...]}`, edges sorted by
    /// `(i, j)`, floats with 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{{\"n\":{},\"edges\":[", self.n);
        for (e, (i, j, w)) in self.edges().enumerate() {
            if e > 0 {
                out.push(',');
            }
            let _ = write!(out, "[{i},{j},{w:.16e}]");
        }
        out.push_str("],\"gammas\":[");
        for (i, g) in self.gammas.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{g:.16e}");
        }
        out.push_str("]}");
        out
    }
}

/// `k` nearest other points per node by L2 distance, nearest first, ties by
/// lower id.
pub fn knn_neighbors(dataset: &Dataset, k: usize, exec: Execution) -> Result<Vec<Vec<usize>>> {
    let n = dataset.len();
    if k == 0 || k >= n {
        return Err(HseError::Config(format!("k={k} must satisfy 1 <= k < N={n}")));
    }
    Ok(exec::map_range(exec, n, |i| {
        let mut cand: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (dataset.squared_distance(i, j), j)).collect();
        nearest(&mut cand, k)
    }))
}

fn nearest(cand: &mut [(f64, usize)], k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
    }
    let head = &mut cand[..k];
    head.sort_unstable_by(cmp);
    head.iter().map(|&(_, j)| j).collect()
}

/// `log2` of the perplexity of `p_j ∝ exp(-gamma * d_j)`, evaluated with the
/// distances shifted by their minimum. Returns `(log2 perplexity, normalizer)`.
pub fn log2_perplexity(sq_dists: &[f64], gamma: f64) -> (f64, f64) {
    let dmin = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut z, mut s) = (0.0, 0.0);
    for &d in sq_dists {
        let shifted = d - dmin;
        let e = (-gamma * shifted).exp();
        z += e;
        s += e * shifted;
    }
    ((z.ln() + gamma * s / z) / std::f64::consts::LN_2, z)
}

/// Binary search for the bandwidth `gamma` whose neighbor distribution hits
/// `target_perplexity`. Starts at `gamma = 1`, doubles or halves until the
/// target is bracketed, then bisects.
pub fn calibrate_gamma(sq_dists: &[f64], target_perplexity: f64) -> Result<Calibration> {
    if sq_dists.len() < 2 {
        return Err(HseError::Config("bandwidth calibration needs at least 2 candidates".into()));
    }
    if target_perplexity.is_nan() || target_perplexity < 1.0 || target_perplexity > sq_dists.len() as f64 {
        return Err(HseError::Config(format!(
            "target perplexity {target_perplexity} outside [1, {}]",
            sq_dists.len()
        )));
    }
    let target = target_perplexity.log2();
    let eval = |gamma: f64| log2_perplexity(sq_dists, gamma).0;
    let done = |gamma: f64, value: f64| Calibration {
        gamma,
        log2_perplexity: value,
        converged: (value - target).abs() <= PERPLEXITY_TOLERANCE,
    };

    let mut gamma = 1.0;
    let mut value = eval(gamma);
    if (value - target).abs() <= PERPLEXITY_TOLERANCE {
        return Ok(done(gamma, value));
    }
    // Perplexity decreases in gamma: too flat means gamma must grow.
    let grow = value > target;
    let (mut lo, mut hi) = (gamma, gamma);
    let mut bracketed = false;
    for _ in 0..MAX_BRACKET_STEPS {
        gamma = if grow { gamma * 2.0 } else { gamma * 0.5 };
        value = eval(gamma);
        if (value - target).abs() <= PERPLEXITY_TOLERANCE {
            return Ok(done(gamma, value));
        }
        if grow {
            lo = hi;
            hi = gamma;
            if value < target {
                bracketed = true;
                break;
            }
        } else {
            hi = lo;
            lo = gamma;
            if value > target {
                bracketed = true;
                break;
            }
        }
    }
    if !bracketed {
        return Ok(done(gamma, value));
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTION_STEPS {
        mid = 0.5 * (lo + hi);
        value = eval(mid);
        if (value - target).abs() <= PERPLEXITY_TOLERANCE {
            break;
        }
        if value > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(done(mid, value))
}

/// Construction parameters shared by every graph kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub kind: GraphKind,
    pub k: usize,
    pub perplexity: f64,
    pub calibration: CalibrationOrder,
    pub exec: Execution,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            kind: GraphKind::Perplexity,
            k: 10,
            perplexity: 30.0,
            calibration: CalibrationOrder::BeforeSparsify,
            exec: Execution::Parallel,
        }
    }
}

pub fn build_graph(dataset: &Dataset, params: &GraphParams) -> Result<SimilarityGraph> {
    match params.kind {
        GraphKind::Perplexity => build_perplexity_graph_with(
            dataset,
            params.k,
            params.perplexity,
            params.calibration,
            params.exec,
        ),
        kind => build_baseline_graph(dataset, params.k, kind, params.exec),
    }
}

pub fn build_perplexity_graph(
    dataset: &Dataset,
    k: usize,
    target_perplexity: f64,
) -> Result<SimilarityGraph> {
    build_perplexity_graph_with(
        dataset,
        k,
        target_perplexity,
        CalibrationOrder::BeforeSparsify,
        Execution::Parallel,
    )
}

struct NodeFit {
    neighbors: Vec<usize>,
    gamma: f64,
    dmin: f64,
    z: f64,
    converged: bool,
}

pub fn build_perplexity_graph_with(
    dataset: &Dataset,
    k: usize,
    target_perplexity: f64,
    order: CalibrationOrder,
    exec: Execution,
) -> Result<SimilarityGraph> {
    let n = dataset.len();
    if n < 3 {
        return Err(HseError::Config(format!("perplexity graph needs N >= 3 (got {n})")));
    }
    if k == 0 || k >= n {
        return Err(HseError::Config(format!("k={k} must satisfy 1 <= k < N={n}")));
    }
    let candidates = match order {
        CalibrationOrder::BeforeSparsify => n - 1,
        CalibrationOrder::AfterSparsify => k,
    };
    if candidates < 2 || target_perplexity.is_nan() || target_perplexity < 1.0 || target_perplexity > candidates as f64 {
        return Err(HseError::Config(format!(
            "perplexity {target_perplexity} is unattainable over {candidates} candidates"
        )));
    }

    let fits: Vec<Result<NodeFit>> = exec::map_range(exec, n, |i| {
        let mut cand: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (dataset.squared_distance(i, j), j)).collect();
        let all: Vec<f64> = cand.iter().map(|&(d, _)| d).collect();
        let neighbors = nearest(&mut cand, k);
        let pool: Vec<f64> = match order {
            CalibrationOrder::BeforeSparsify => all,
            CalibrationOrder::AfterSparsify => {
                neighbors.iter().map(|&j| dataset.squared_distance(i, j)).collect()
            }
        };
        let cal = calibrate_gamma(&pool, target_perplexity)?;
        let dmin = pool.iter().copied().fold(f64::INFINITY, f64::min);
        let (_, z) = log2_perplexity(&pool, cal.gamma);
        Ok(NodeFit { neighbors, gamma: cal.gamma, dmin, z, converged: cal.converged })
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;

    let edges = union_edges(fits.iter().map(|f| f.neighbors.as_slice()));
    let conditional = |from: usize, to: usize| -> f64 {
        let f = &fits[from];
        if order == CalibrationOrder::AfterSparsify && !f.neighbors.contains(&to) {
            return 0.0;
        }
        (-f.gamma * (dataset.squared_distance(from, to) - f.dmin)).exp() / f.z
    };
    let flagged = fits.iter().enumerate().filter(|(_, f)| !f.converged).map(|(i, _)| i).collect();
    let gammas = fits.iter().map(|f| f.gamma).collect();
    Ok(SimilarityGraph::from_union_edges(
        n,
        k,
        GraphKind::Perplexity,
        Some(target_perplexity),
        gammas,
        &edges,
        |i, j| 0.5 * (conditional(i, j) + conditional(j, i)),
        flagged,
    ))
}

fn union_edges<'a>(lists: impl Iterator<Item = &'a [usize]>) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = lists
        .enumerate()
        .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// The `mean`, `binary` and `knn` baselines on the union-kNN support.
pub fn build_baseline_graph(
    dataset: &Dataset,
    k: usize,
    kind: GraphKind,
    exec: Execution,
) -> Result<SimilarityGraph> {
    let n = dataset.len();
    let knn = knn_neighbors(dataset, k, exec)?;
    let edges = union_edges(knn.iter().map(Vec::as_slice));
    let sq = |i: usize, j: usize| dataset.squared_distance(i, j);
    let graph = match kind {
        GraphKind::Binary => SimilarityGraph::from_union_edges(
            n,
            k,
            kind,
            None,
            vec![1.0; n],
            &edges,
            |_, _| 1.0,
            Vec::new(),
        ),
        GraphKind::Mean => {
            let sigma =
                edges.iter().map(|&(i, j)| sq(i, j).sqrt()).sum::<f64>() / edges.len() as f64;
            let gamma = bandwidth(sigma);
            SimilarityGraph::from_union_edges(
                n,
                k,
                kind,
                None,
                vec![gamma; n],
                &edges,
                |i, j| (-gamma * sq(i, j)).exp(),
                Vec::new(),
            )
        }
        GraphKind::Knn => {
            let sigmas: Vec<f64> = knn
                .iter()
                .enumerate()
                .map(|(i, nbrs)| nbrs.iter().map(|&j| sq(i, j).sqrt()).sum::<f64>() / k as f64)
                .collect();
            let positive: Vec<f64> = sigmas.iter().copied().filter(|&s| s > 0.0).collect();
            let fallback = if positive.is_empty() {
                1.0
            } else {
                positive.iter().sum::<f64>() / positive.len() as f64
            };
            let gammas: Vec<f64> = sigmas
                .iter()
                .map(|&s| bandwidth(if s > 0.0 { s } else { fallback }))
                .collect();
            SimilarityGraph::from_union_edges(
                n,
                k,
                kind,
                None,
                gammas.clone(),
                &edges,
                |i, j| {
                    let d = sq(i, j);
                    0.5 * ((-gammas[i] * d).exp() + (-gammas[j] * d).exp())
                },
                Vec::new(),
            )
        }
        GraphKind::Perplexity => {
            return Err(HseError::Config("perplexity is not a baseline graph kind".into()))
        }
    };
    Ok(graph)
}

/// `gamma = 1 / (2 sigma^2)`, with a zero spread mapped to `gamma = 1`.
fn bandwidth(sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (2.0 * sigma * sigma)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{uniform_cube, BlobSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(rows: &[&[f64]]) -> Dataset {
        let q = rows[0].len();
        Dataset::new("pts", rows.len(), q, rows.concat(), None, 2).unwrap()
    }

    fn assert_valid(g: &SimilarityGraph) {
        for i in 0..g.len() {
            assert!(g.neighbors(i).len() >= g.k(), "node {i} has too few edges");
            for &(j, w) in g.neighbors(i) {
                assert_ne!(i, j);
                assert!(w.is_finite() && w >= 0.0);
                assert_eq!(w.to_bits(), g.weight(j, i).to_bits());
            }
        }
    }

    #[test]
    fn knn_collinear() {
        let ds = points(&[&[0.0], &[1.0], &[3.0]]);
        let nn = knn_neighbors(&ds, 1, Execution::Sequential).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_square_excludes_diagonal() {
        let ds = points(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let nn = knn_neighbors(&ds, 2, Execution::Sequential).unwrap();
        let sorted = |mut v: Vec<usize>| {
            v.sort();
            v
        };
        assert_eq!(sorted(nn[0].clone()), vec![1, 3]);
        assert_eq!(sorted(nn[1].clone()), vec![0, 2]);
        assert_eq!(sorted(nn[2].clone()), vec![1, 3]);
        assert_eq!(sorted(nn[3].clone()), vec![0, 2]);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let ds = uniform_cube(50, 5, 2, 7).unwrap();
        let nn = knn_neighbors(&ds, 10, Execution::Parallel).unwrap();
        for i in 0..50 {
            let mut all: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 =
                        ds.row(i).iter().zip(ds.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<usize> = all[..10].iter().map(|&(_, j)| j).collect();
            assert_eq!(nn[i], expect);
        }
    }

    #[test]
    fn knn_rejects_large_k() {
        let ds = points(&[&[0.0], &[1.0], &[3.0]]);
        assert!(matches!(knn_neighbors(&ds, 3, Execution::Sequential), Err(HseError::Config(_))));
    }

    #[test]
    fn calibration_uniform_neighbors() {
        let c = calibrate_gamma(&[2.0, 2.0], 2.0).unwrap();
        assert!(c.converged);
        assert!((c.log2_perplexity - 1.0).abs() < 1e-12);
        for n in [3usize, 7, 20] {
            let d = vec![0.7; n];
            for gamma in [0.01, 1.0, 50.0] {
                assert!((log2_perplexity(&d, gamma).0 - (n as f64).log2()).abs() < 1e-12);
            }
            assert!(calibrate_gamma(&d, n as f64).unwrap().converged);
        }
    }

    #[test]
    fn calibration_gaussian_sample_reevaluated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::StandardNormal;
        let pts: Vec<[f64; 2]> = (0..100)
            .map(|_| [rng.sample::<f64, _>(normal), rng.sample::<f64, _>(normal)])
            .collect();
        let d: Vec<f64> = pts[1..]
            .iter()
            .map(|p| (p[0] - pts[0][0]).powi(2) + (p[1] - pts[0][1]).powi(2))
            .collect();
        let c = calibrate_gamma(&d, 30.0).unwrap();
        assert!(c.converged);
        // independent entropy over unshifted conditionals
        let w: Vec<f64> = d.iter().map(|&x| (-c.gamma * x).exp()).collect();
        let z: f64 = w.iter().sum();
        let h: f64 = w.iter().map(|&x| x / z).filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum();
        assert!((h - 30f64.log2()).abs() <= 1e-5, "h={h}");
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        assert!(calibrate_gamma(&[1.0], 1.0).is_err());
        assert!(calibrate_gamma(&[1.0, 2.0, 3.0], 4.0).is_err());
    }

    #[test]
    fn perplexity_graph_rejects_tiny_pools() {
        let ds = points(&[&[0.0], &[1.0]]);
        assert!(matches!(build_perplexity_graph(&ds, 1, 1.5), Err(HseError::Config(_))));
    }

    #[test]
    fn perplexity_graph_equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let ds = points(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]]);
        let g = build_perplexity_graph(&ds, 2, 2.0).unwrap();
        let w: Vec<f64> = g.edges().map(|(_, _, w)| w).collect();
        assert_eq!(w.len(), 3);
        for x in &w {
            assert!((x - 0.5).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn perplexity_graph_matches_dense_reference() {
        let ds = uniform_cube(40, 4, 2, 3).unwrap();
        let (k, perp) = (6, 10.0);
        let g = build_perplexity_graph(&ds, k, perp).unwrap();
        assert_valid(&g);
        let n = ds.len();
        // dense conditionals over all j != i from the stored bandwidths
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let w: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { (-g.gammas()[i] * ds.squared_distance(i, j)).exp() })
                .collect();
            let z: f64 = w.iter().sum();
            for j in 0..n {
                p[i][j] = w[j] / z;
            }
        }
        let knn = knn_neighbors(&ds, k, Execution::Sequential).unwrap();
        for i in 0..n {
            for j in 0..n {
                let support = knn[i].contains(&j) || knn[j].contains(&i);
                let expect = if support { 0.5 * (p[i][j] + p[j][i]) } else { 0.0 };
                let got = g.weight(i, j);
                assert!((got - expect).abs() <= 1e-12 * expect.max(1e-300), "({i},{j}) {got} vs {expect}");
                assert_eq!(got == 0.0, !support || expect == 0.0);
            }
        }
    }

    #[test]
    fn perplexity_recomputed_from_gammas() {
        let ds = uniform_cube(200, 3, 2, 5).unwrap();
        let g = build_perplexity_graph(&ds, 10, 30.0).unwrap();
        let mut ok = 0;
        for i in 0..ds.len() {
            let d: Vec<f64> =
                (0..ds.len()).filter(|&j| j != i).map(|j| ds.squared_distance(i, j)).collect();
            if (log2_perplexity(&d, g.gammas()[i]).0 - 30f64.log2()).abs() <= 1e-4 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * ds.len() as f64, "{ok}");
        assert!(g.flagged().is_empty());
    }

    #[test]
    fn after_sparsify_variant_calibrates_on_knn() {
        let ds = uniform_cube(60, 3, 2, 9).unwrap();
        let g = build_perplexity_graph_with(
            &ds,
            10,
            5.0,
            CalibrationOrder::AfterSparsify,
            Execution::Sequential,
        )
        .unwrap();
        assert_valid(&g);
        assert!(build_perplexity_graph_with(
            &ds,
            10,
            30.0,
            CalibrationOrder::AfterSparsify,
            Execution::Sequential
        )
        .is_err());
    }

    #[test]
    fn baseline_binary_and_mean() {
        let ds = uniform_cube(30, 2, 2, 1).unwrap();
        let g = build_baseline_graph(&ds, 5, GraphKind::Binary, Execution::Sequential).unwrap();
        assert_valid(&g);
        assert!(g.edges().all(|(_, _, w)| w == 1.0));

        let h = 3f64.sqrt() / 2.0;
        let tri = points(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 2.0 * h]]);
        let g = build_baseline_graph(&tri, 2, GraphKind::Mean, Execution::Sequential).unwrap();
        for (_, _, w) in g.edges() {
            assert!((w - (-0.5f64).exp()).abs() < 1e-12);
        }
        assert!("lle".parse::<GraphKind>().is_err());
        assert!(matches!(
            build_baseline_graph(&ds, 5, GraphKind::Perplexity, Execution::Sequential),
            Err(HseError::Config(_))
        ));
    }

    #[test]
    fn baseline_knn_two_scales() {
        let spec = BlobSpec { centers: vec![vec![0.0, 0.0], vec![50.0, 0.0]], std_dev: 1.0, points: 60, seed: 2 };
        let base = spec.generate("two").unwrap();
        // shrink class 0 into a tight cluster, leave class 1 loose
        let feats: Vec<f64> = (0..60)
            .flat_map(|i| {
                let r = base.row(i);
                if i % 2 == 0 { vec![r[0] * 0.05, r[1] * 0.05] } else { vec![r[0], r[1] * 3.0] }
            })
            .collect();
        let ds = Dataset::new("two-scale", 60, 2, feats, None, 2).unwrap();
        let k = 5;
        let g = build_baseline_graph(&ds, k, GraphKind::Knn, Execution::Sequential).unwrap();
        assert_valid(&g);
        let tight_max = (0..60).step_by(2).map(|i| g.gammas()[i]).fold(f64::INFINITY, f64::min);
        let loose_max = (1..60).step_by(2).map(|i| g.gammas()[i]).fold(0.0, f64::max);
        assert!(tight_max > loose_max);
        // sigma_i recomputed directly
        let knn = knn_neighbors(&ds, k, Execution::Sequential).unwrap();
        for i in 0..60 {
            let s: f64 = knn[i].iter().map(|&j| ds.squared_distance(i, j).sqrt()).sum::<f64>() / k as f64;
            assert!((g.gammas()[i] - 1.0 / (2.0 * s * s)).abs() <= 1e-9 * g.gammas()[i]);
        }
    }

    #[test]
    fn perplexity_decreases_in_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d: Vec<f64> = (0..15).map(|_| rng.random::<f64>() * 4.0).collect();
            let mut prev = f64::INFINITY;
            for step in 0..40 {
                let gamma = 0.01 * 1.3f64.powi(step);
                let v = log2_perplexity(&d, gamma).0;
                assert!(v < prev, "not decreasing at gamma={gamma}");
                prev = v;
            }
        }
    }

    #[test]
    fn graph_json_export() {
        let g = SimilarityGraph::from_edges(3, &[(1, 2, 0.25), (0, 1, 1.0)]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["n"], 3);
        assert_eq!(v["edges"][0][0], 0);
        assert_eq!(v["edges"][1][2].as_f64(), Some(0.25));
        assert!(g.to_json().contains("2.5000000000000000e-1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn graphs_are_valid_and_deterministic(seed in 0u64..1000, n in 12usize..40, kind_ix in 0usize..4) {
            let ds = uniform_cube(n, 3, 2, seed).unwrap();
            let params = GraphParams { kind: GraphKind::ALL[kind_ix], k: 4, perplexity: 6.0, ..GraphParams::default() };
            let a = build_graph(&ds, &params).unwrap();
            let b = build_graph(&ds, &GraphParams { exec: Execution::Sequential, ..params }).unwrap();
            assert_valid(&a);
            prop_assert_eq!(a.to_json(), b.to_json());
        }
    }
}
