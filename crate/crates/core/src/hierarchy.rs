//! Authority-shift cluster tree.
//!
//! Level 0 holds one leaf per datapoint. To go from level `l` to `l + 1`, the
//! current clusters form a reduced graph (inter-cluster weights summed), a
//! lazy random walk `P = (I + D^-1 W) / 2` is run for `t = 2^(l + 1)` steps,
//! and every cluster shifts toward the neighbor it most likely reaches weighted by that
//! neighbor's authority `s_j = sum_i (P^t)_ij`, provided the neighbor has
//! strictly higher authority (ties to the lower representative id). Shift
//! chains end at authority points, which become the representatives of the
//! next level. A level without merges closes the tree with a forced root.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HseError, Result};
use crate::exec::{self, Execution};
use crate::graph::SimilarityGraph;

/// Reduced graphs up to this size use dense repeated squaring.
const DENSE_WALK_LIMIT: usize = 1500;
const MAX_SQUARINGS: usize = 62;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub representative: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTree {
    nodes: Vec<TreeNode>,
    root: usize,
    n: usize,
    order: Vec<usize>,
    rank: Vec<usize>,
}

/// Row of the tree export consumed by the UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNodeExport {
    pub id: usize,
    pub representative: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub member_count: usize,
}

impl ClusterTree {
    fn assemble(nodes: Vec<TreeNode>, root: usize, n: usize) -> Self {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| priority_key(&nodes[i]));
        let mut rank = vec![0; nodes.len()];
        for (pos, &id) in order.iter().enumerate() {
            rank[id] = pos;
        }
        ClusterTree { nodes, root, n, order, rank }
    }

    /// A root over `n` leaves, represented by `root_rep`.
    pub fn flat(n: usize, root_rep: usize) -> Self {
        let mut nodes: Vec<TreeNode> = (0..n).map(leaf).collect();
        let root = n;
        let children: Vec<usize> = (0..n).collect();
                for &c in &children {
            nodes[c].parent = Some(root);
        }
        nodes.push(TreeNode {
            id: root,
            representative: root_rep,
            level: 1,
            parent: None,
            children,
            member_count: n,
        });
        ClusterTree::assemble(nodes, root, n)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    pub fn root_id(&self) -> usize {
        self.root
    }

    pub fn point_count(&self) -> usize {
        self.n
    }

    /// Number of levels, counting the leaf level.
    pub fn levels(&self) -> usize {
        self.root().level + 1
    }

    /// Nodes top-down: level descending, then member count descending, then
    /// representative id ascending.
    pub fn linearization(&self) -> &[usize] {
        &self.order
    }

    /// Position of node `id` in the linearization.
    pub fn rank(&self, id: usize) -> usize {
        self.rank[id]
    }

    /// Nodes represented by `point`, from its leaf upward.
    pub fn represented_by(&self, point: usize) -> impl Iterator<Item = &TreeNode> + '_ {
        let mut cur = (point < self.n).then_some(point);
        std::iter::from_fn(move || {
            let node = &self.nodes[cur?];
            cur = node.parent.filter(|&p| self.nodes[p].representative == point);
            Some(node)
        })
    }

    /// First `count` distinct representatives in linearization order.
    pub fn leading_representatives(&self, count: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &id in self.linearization() {
            let rep = self.nodes[id].representative;
            if !out.contains(&rep) {
                out.push(rep);
                if out.len() == count {
                    break;
                }
            }
        }
        out
    }

    pub fn export(&self) -> Vec<TreeNodeExport> {
        self.nodes
            .iter()
            .map(|n| TreeNodeExport {
                id: n.id,
                representative: n.representative,
                level: n.level,
                parent: n.parent,
                member_count: n.member_count,
            })
            .collect()
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HseError::Validation(m));
        let roots: Vec<_> = self.nodes.iter().filter(|n| n.parent.is_none()).collect();
        if roots.len() != 1 || roots[0].id != self.root {
            return bad(format!("expected one root, found {}", roots.len()));
        }
        let mut per_level = vec![0usize; self.levels()];
        let mut leaf_reps = vec![false; self.n];
        for node in &self.nodes {
            per_level[node.level] += node.member_count;
            if node.children.is_empty() {
                if node.level != 0 || node.member_count != 1 || leaf_reps[node.representative] {
                    return bad(format!("malformed leaf {}", node.id));
                }
                leaf_reps[node.representative] = true;
                continue;
            }
            let mut sum = 0;
            let mut holds_rep = 0;
            for &c in &node.children {
                let child = &self.nodes[c];
                if child.parent != Some(node.id) || child.level + 1 != node.level {
                    return bad(format!("bad parent link {} -> {}", node.id, c));
                }
                sum += child.member_count;
                holds_rep += usize::from(child.representative == node.representative);
            }
            if sum != node.member_count {
                return bad(format!("member count mismatch at node {}", node.id));
            }
            if holds_rep != 1 {
                return bad(format!("node {} representative held by {holds_rep} children", node.id));
            }
            let keys: Vec<_> = node
                .children
                .iter()
                .map(|&c| (Reverse(self.nodes[c].member_count), self.nodes[c].representative))
                .collect();
            if keys.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("children of node {} out of order", node.id));
            }
        }
        if let Some(level) = per_level.iter().position(|&m| m != self.n) {
            return bad(format!("level {level} covers {} of {} points", per_level[level], self.n));
        }
        Ok(())
    }
}

pub(crate) fn priority_key(node: &TreeNode) -> (Reverse<usize>, Reverse<usize>, usize) {
    (Reverse(node.level), Reverse(node.member_count), node.representative)
}

fn leaf(i: usize) -> TreeNode {
    TreeNode { id: i, representative: i, level: 0, parent: None, children: Vec::new(), member_count: 1 }
}

pub fn build_hierarchy(graph: &SimilarityGraph) -> ClusterTree {
    build_hierarchy_with(graph, Execution::Parallel)
}

pub fn build_hierarchy_with(graph: &SimilarityGraph, exec: Execution) -> ClusterTree {
    let n = graph.len();
    let mut nodes: Vec<TreeNode> = (0..n).map(leaf).collect();
    // current clusters as tree node ids, ordered by representative
    let mut current: Vec<usize> = (0..n).collect();
    let mut cluster_of_point: Vec<usize> = (0..n).collect();
    let mut level = 0;
    while current.len() > 1 {
        let m = current.len();
        let adjacency = reduced_adjacency(graph, &cluster_of_point, m);
        let squarings = (level + 1).min(MAX_SQUARINGS);
        let (scores, authority) = walk_scores(&adjacency, squarings, exec, DENSE_WALK_LIMIT);

        let higher = |j: usize, i: usize| {
            authority[j] > authority[i] || (authority[j] == authority[i] && j < i)
        };
        let shift: Vec<usize> = (0..m)
            .map(|i| {
                let mut best: Option<(usize, f64)> = None;
                for (&(j, _), &v) in adjacency[i].iter().zip(&scores[i]) {
                    let score = v * authority[j];
                    if v > 0.0 && best.is_none_or(|(_, b)| score > b) {
                        best = Some((j, score));
                    }
                }
                match best {
                    Some((j, _)) if higher(j, i) => j,
                    _ => i,
                }
            })
            .collect();

        let parent_id = nodes.len();
        if shift.iter().enumerate().all(|(i, &a)| a == i) {
            let top = (0..m)
                .max_by(|&a, &b| authority[a].total_cmp(&authority[b]).then(b.cmp(&a)))
                .expect("m > 1");
            let rep = nodes[current[top]].representative;
            let mut root = TreeNode {
                id: parent_id,
                representative: rep,
                level: level + 1,
                parent: None,
                children: current.clone(),
                member_count: n,
            };
            sort_children(&mut root.children, &nodes);
            for &c in &current {
                nodes[c].parent = Some(parent_id);
            }
            nodes.push(root);
            current = vec![parent_id];
            break;
        }

        // chains strictly climb (authority, -index), so they terminate
        let mut sink = vec![usize::MAX; m];
        for i in 0..m {
            let mut a = i;
            while shift[a] != a {
                a = shift[a];
            }
            sink[i] = a;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..m {
            groups.entry(sink[i]).or_default().push(i);
        }
        let mut groups: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
        groups.sort_by_key(|(head, _)| nodes[current[*head]].representative);
        let mut next = Vec::with_capacity(groups.len());
        let mut new_index = vec![0; m];
        for (slot, (head, members)) in groups.into_iter().enumerate() {
            let id = nodes.len();
            let mut children: Vec<usize> = members.iter().map(|&i| current[i]).collect();
            sort_children(&mut children, &nodes);
            let member_count = children.iter().map(|&c| nodes[c].member_count).sum();
            for &c in &children {
                nodes[c].parent = Some(id);
            }
            for &i in &members {
                new_index[i] = slot;
            }
            nodes.push(TreeNode {
                id,
                representative: nodes[current[head]].representative,
                level: level + 1,
                parent: None,
                children,
                member_count,
            });
            next.push(id);
        }
        for c in cluster_of_point.iter_mut() {
            *c = new_index[*c];
        }
        current = next;
        level += 1;
    }
    let root = current[0];
    ClusterTree::assemble(nodes, root, n)
}

fn sort_children(children: &mut [usize], nodes: &[TreeNode]) {
    children.sort_by_key(|&c| (Reverse(nodes[c].member_count), nodes[c].representative));
}

/// Inter-cluster weights per cluster, sorted by neighbor, self loops dropped.
fn reduced_adjacency(
    graph: &SimilarityGraph,
    cluster_of_point: &[usize],
    m: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
    for i in 0..graph.len() {
        let ci = cluster_of_point[i];
        for &(j, w) in graph.neighbors(i) {
            let cj = cluster_of_point[j];
            if ci != cj && w > 0.0 {
                *acc[ci].entry(cj).or_insert(0.0) += w;
            }
        }
    }
    acc.into_iter().map(|row| row.into_iter().collect()).collect()
}

/// For the lazy walk `P = (I + D^-1 W) / 2` and `V = P^t` with
/// `t = 2^squarings`: `V_ij` for every neighbor `j` of `i` (aligned with `adjacency[i]`) and the column masses `s_j = sum_i V_ij`.
fn walk_scores(
    adjacency: &[Vec<(usize, f64)>],
    squarings: usize,
    exec: Execution,
    dense_limit: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = adjacency.len();
    let transition: Vec<Vec<(usize, f64)>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row.iter().map(|&(_, w)| w).sum();
            if d <= 0.0 {
                return vec![(i, 1.0)];
            }
            let mut out: Vec<(usize, f64)> = row.iter().map(|&(j, w)| (j, 0.5 * w / d)).collect();
            out.push((i, 0.5));
            out
        })
        .collect();
    let pick = |i: usize, row: &[f64]| adjacency[i].iter().map(|&(j, _)| row[j]).collect::<Vec<_>>();

    if m <= dense_limit {
        let mut v = vec![0.0; m * m];
        for (i, row) in transition.iter().enumerate() {
            for &(j, p) in row {
                v[i * m + j] = p;
            }
        }
        for _ in 0..squarings {
            let rows = exec::map_range(exec, m, |i| {
                let mut out = vec![0.0; m];
                for k in 0..m {
                    let a = v[i * m + k];
                    if a != 0.0 {
                        for (o, &b) in out.iter_mut().zip(&v[k * m..(k + 1) * m]) {
                            *o += a * b;
                        }
                    }
                }
                out
            });
            v = rows.concat();
        }
        let mut authority = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                authority[j] += v[i * m + j];
            }
        }
        let scores = (0..m).map(|i| pick(i, &v[i * m..(i + 1) * m])).collect();
        return (scores, authority);
    }

    // large reduced graphs: propagate each row for t steps
    let steps = 1usize << squarings.min(20);
    let rows = exec::map_range(exec, m, |i| {
        let mut cur = vec![0.0; m];
        cur[i] = 1.0;
        let mut next = vec![0.0; m];
        for _ in 0..steps {
            next.fill(0.0);
            for (k, &a) in cur.iter().enumerate() {
                if a != 0.0 {
                    for &(j, p) in &transition[k] {
                        next[j] += a * p;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let nz: Vec<(usize, f64)> =
            cur.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect();
        (pick(i, &cur), nz)
    });
    let mut authority = vec![0.0; m];
    let mut scores = Vec::with_capacity(m);
    for (s, nz) in rows {
        for (j, v) in nz {
            authority[j] += v;
        }
        scores.push(s);
    }
    (scores, authority)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::uniform_cube;

    fn bridged_triangles() -> SimilarityGraph {
        SimilarityGraph::from_edges(
            6,
            &[
                (0, 1, 1.0),
                (0, 2, 1.0),
                (1, 2, 1.0),
                (3, 4, 1.0),
                (3, 5, 1.0),
                (4, 5, 1.0),
                (2, 3, 1e-6),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_point_tree() {
        let g = SimilarityGraph::from_edges(1, &[]).unwrap();
        let t = build_hierarchy(&g);
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.root().representative, 0);
        assert_eq!(t.levels(), 1);
        t.validate().unwrap();
    }

    #[test]
    fn bridged_triangles_split_at_level_one() {
        let t = build_hierarchy(&bridged_triangles());
        t.validate().unwrap();
        let level1: Vec<&TreeNode> = t.nodes().iter().filter(|n| n.level == 1).collect();
        assert_eq!(level1.len(), 2);
        let mut sizes: Vec<Vec<usize>> = level1
            .iter()
            .map(|n| {
                let mut m: Vec<usize> = n.children.iter().map(|&c| t.node(c).representative).collect();
                m.sort();
                m
            })
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(t.levels(), 3);
        assert_eq!(t.root().children.len(), 2);
        // bridge endpoints collect the most walk mass in each triangle
        let reps: Vec<usize> = level1.iter().map(|n| n.representative).collect();
        assert_eq!(reps, vec![2, 3]);
        assert_eq!(t.root().representative, 2);
    }

    #[test]
    fn bridged_triangles_linearization() {
        let t = build_hierarchy(&bridged_triangles());
        let order: Vec<(usize, usize, usize)> = t
            .linearization()
            .iter()
            .map(|&i| {
                let n = t.node(i);
                (n.level, n.member_count, n.representative)
            })
            .collect();
        let expect = vec![
            (2, 6, 2),
            (1, 3, 2),
            (1, 3, 3),
            (0, 1, 0),
            (0, 1, 1),
            (0, 1, 2),
            (0, 1, 3),
            (0, 1, 4),
            (0, 1, 5),
        ];
        assert_eq!(order, expect);
        assert_eq!(t.leading_representatives(3), vec![2, 3, 0]);
    }

    #[test]
    fn disconnected_graph_gets_forced_root() {
        let g = SimilarityGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let t = build_hierarchy(&g);
        t.validate().unwrap();
        assert_eq!(t.root().children.len(), 2);
        let isolated = SimilarityGraph::from_edges(3, &[]).unwrap();
        let t = build_hierarchy(&isolated);
        t.validate().unwrap();
        assert_eq!(t.root().children.len(), 3);
        assert_eq!(t.root().representative, 0);
    }

    #[test]
    fn random_graph_trees_hold_invariants() {
        for seed in 0..10 {
            let ds = uniform_cube(150, 2, 2, seed).unwrap();
            let g = crate::graph::build_perplexity_graph(&ds, 8, 15.0).unwrap();
            let a = build_hierarchy_with(&g, Execution::Parallel);
            let b = build_hierarchy_with(&g, Execution::Sequential);
            a.validate().unwrap();
            assert_eq!(a, b);
            let bound = 4 * (150f64).log2().ceil() as usize;
            assert!(a.levels() <= bound, "{} levels", a.levels());
            assert_eq!(t_first(&a), a.root().representative);
        }
    }

    fn t_first(t: &ClusterTree) -> usize {
        t.node(t.linearization()[0]).representative
    }

    #[test]
    fn dense_and_row_walks_agree() {
        let ds = uniform_cube(60, 2, 2, 3).unwrap();
        let g = crate::graph::build_perplexity_graph(&ds, 6, 10.0).unwrap();
        let points: Vec<usize> = (0..60).collect();
        let adj = reduced_adjacency(&g, &points, 60);
        for squarings in 1..4 {
            let (s_dense, a_dense) = walk_scores(&adj, squarings, Execution::Sequential, usize::MAX);
            let (s_row, a_row) = walk_scores(&adj, squarings, Execution::Parallel, 0);
            for i in 0..60 {
                for (x, y) in s_dense[i].iter().zip(&s_row[i]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            for (x, y) in a_dense.iter().zip(&a_row) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn export_and_flat_tree() {
        let t = ClusterTree::flat(4, 2);
        t.validate().unwrap();
        assert_eq!(t.root().representative, 2);
        let e = t.export();
        assert_eq!(e.len(), 5);
        assert_eq!(e[4].parent, None);
        assert_eq!(e[0].parent, Some(4));
    }
}
