//! Independent oracles shared by unit tests and the integration suites
//! (included there by path). Nothing here calls into the incremental solver.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use hse_core::grf::LabelState;
use hse_core::SimilarityGraph;

/// Random weighted graph with `n` in `[n_max / 2, n_max]`, `C` in `[2, c_max]`
/// and `labels` distinct labeled points. About one graph in five has an
/// isolated extra component.
pub fn random_graph<R: Rng>(
    rng: &mut R,
    n_max: usize,
    c_max: usize,
    labels: usize,
) -> (Arc<SimilarityGraph>, usize, LabelState) {
    let n = rng.random_range((n_max / 2).max(6)..=n_max);
    let c = rng.random_range(2..=c_max.max(2));
    let split = if rng.random_bool(0.2) { n - 3 } else { n };
    let mut edges = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut add = |i: usize, j: usize, w: f64, edges: &mut Vec<(usize, usize, f64)>| {
        if i != j && seen.insert((i.min(j), i.max(j))) {
            edges.push((i, j, w));
        }
    };
    // spanning chain per part, then random chords inside each part
    for i in 1..split {
        let j = rng.random_range(0..i);
        add(i, j, rng.random_range(0.1..1.0), &mut edges);
    }
    for i in split + 1..n {
        add(i, i - 1, rng.random_range(0.1..1.0), &mut edges);
    }
    for _ in 0..2 * split {
        let i = rng.random_range(0..split);
        let j = rng.random_range(0..split);
        add(i, j, rng.random_range(0.05..1.0), &mut edges);
    }
    let graph = Arc::new(SimilarityGraph::from_edges(n, &edges).unwrap());
    let mut pts: Vec<usize> = (0..split).collect();
    let mut chosen = Vec::new();
    for _ in 0..labels.min(split - 1) {
        let k = rng.random_range(0..pts.len());
        chosen.push(pts.swap_remove(k));
    }
    let state =
        LabelState::from_pairs(chosen.into_iter().map(|p| (p, rng.random_range(0..c)))).unwrap();
    (graph, c, state)
}

/// Dense Gaussian-elimination harmonic solution. Points not reachable from a
/// label get uniform rows.
pub fn dense_harmonic(graph: &SimilarityGraph, c: usize, labels: &LabelState) -> Vec<f64> {
    let n = graph.len();
    let mut reach = vec![false; n];
    let mut queue: VecDeque<usize> = labels.iter().map(|(p, _)| p).collect();
    for &p in &queue {
        reach[p] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &(v, w) in graph.neighbors(u) {
            if w > 0.0 && !reach[v] {
                reach[v] = true;
                queue.push_back(v);
            }
        }
    }
    let mut f = vec![1.0 / c as f64; n * c];
    for (p, y) in labels.iter() {
        f[p * c..(p + 1) * c].fill(0.0);
        f[p * c + y] = 1.0;
    }
    let u: Vec<usize> = (0..n).filter(|&i| reach[i] && !labels.contains(i)).collect();
    let m = u.len();
    if m == 0 {
        return f;
    }
    let mut pos = vec![usize::MAX; n];
    for (t, &i) in u.iter().enumerate() {
        pos[i] = t;
    }
    // augmented [A | B], A = D_uu - W_uu, B = W_ul Y_l
    let width = m + c;
    let mut a = vec![0.0; m * width];
    for (t, &i) in u.iter().enumerate() {
        for &(j, w) in graph.neighbors(i) {
            a[t * width + t] += w;
            if pos[j] != usize::MAX {
                a[t * width + pos[j]] -= w;
            } else if let Some(y) = labels.get(j) {
                a[t * width + m + y] += w;
            }
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x * width + col].abs().total_cmp(&a[y * width + col].abs()))
            .unwrap();
        if piv != col {
            for k in 0..width {
                a.swap(piv * width + k, col * width + k);
            }
        }
        let d = a[col * width + col];
        for r in 0..m {
            if r != col {
                let factor = a[r * width + col] / d;
                if factor != 0.0 {
                    for k in col..width {
                        a[r * width + k] -= factor * a[col * width + k];
                    }
                }
            }
        }
    }
    for (t, &i) in u.iter().enumerate() {
        let d = a[t * width + t];
        for k in 0..c {
            f[i * c + k] = a[t * width + m + k] / d;
        }
    }
    f
}

/// `sum_i (1 - max_c F_ic)` as the literal double sum with MAP indicator.
pub fn literal_expected_error(f: &[f64], c: usize) -> f64 {
    let mut total = 0.0;
    for row in f.chunks(c) {
        let mut map = 0;
        for k in 1..c {
            if row[k] > row[map] {
                map = k;
            }
        }
        for (y, &p) in row.iter().enumerate() {
            if y != map {
                total += p;
            }
        }
    }
    total
}

/// Brute-force expected risk of a candidate: retrain from scratch for every
/// hypothesized class.
pub fn brute_force_risk(
    graph: &SimilarityGraph,
    c: usize,
    labels: &LabelState,
    current: &[f64],
    q: usize,
) -> (f64, Vec<f64>) {
    let per_class: Vec<f64> = (0..c)
        .map(|y| {
            let pairs = labels.iter().chain(std::iter::once((q, y)));
            let l = LabelState::from_pairs(pairs).unwrap();
            literal_expected_error(&dense_harmonic(graph, c, &l), c)
        })
        .collect();
    let risk = (0..c).map(|y| current[q * c + y] * per_class[y]).sum();
    (risk, per_class)
}
