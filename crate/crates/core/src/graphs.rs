//! Labeled graphs, cutsize, and the reductions that turn trees and general
//! graphs into a line of context slots.
//!
//! Vertices are 1-based throughout (`1..=n`), matching the graph file format.
//! Labels are dense small integers.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// A label id. String labels are resolved to ids at ingestion.
pub type Label = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unlabeled graph")]
    Unlabeled,
    #[error("requires tree or line")]
    RequiresTree,
    #[error("not a tree")]
    NotATree,
    #[error("graph not connected")]
    NotConnected,
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("vertex {vertex} out of range 1..={n}")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected simple graph on vertices `1..=n` with an optional full labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Option<Vec<Label>>,
    adjacency: Vec<Vec<usize>>,
}

impl LabeledGraph {
    /// Builds a graph, rejecting self-loops, duplicate edges and out-of-range
    /// endpoints. `labels[v - 1]` is the label of vertex `v`.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        labels: Option<Vec<Label>>,
    ) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); n + 1];
        for &(u, v) in &edges {
            for w in [u, v] {
                if w == 0 || w > n {
                    return Err(GraphError::VertexOutOfRange { vertex: w, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(GraphError::DuplicateEdge(u, v));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::LabelCount {
                    expected: n,
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            n,
            edges,
            labels,
            adjacency,
        })
    }

    /// The line graph `1 - 2 - ... - n`.
    pub fn line(n: usize, labels: Option<Vec<Label>>) -> Result<Self, GraphError> {
        let edges = (1..n).map(|i| (i, i + 1)).collect();
        Self::new(n, edges, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// Label of vertex `v`, if the graph is labeled.
    pub fn label(&self, v: usize) -> Option<Label> {
        self.labels.as_ref().map(|l| l[v - 1])
    }

    /// Sorted neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self, GraphError> {
        if labels.len() != self.n {
            return Err(GraphError::LabelCount {
                expected: self.n,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of distinct labels (`max id + 1`), zero when unlabeled.
    pub fn label_count(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m as usize + 1)
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n + 1];
        let mut queue = VecDeque::from([1usize]);
        seen[1] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    pub fn is_tree(&self) -> bool {
        self.n >= 1 && self.edges.len() == self.n - 1 && self.is_connected()
    }

    /// Edge list normalized to `u < v` and sorted; used to compare trees.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self
            .edges
            .iter()
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Serializes to the text graph format: `n m L`, `m` edge lines, `n`
    /// label lines. Unlabeled graphs are written with every label `0`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let l = self.label_count().max(1);
        writeln!(out, "{} {} {}", self.n, self.edges.len(), l).unwrap();
        for &(u, v) in &self.edges {
            writeln!(out, "{u} {v}").unwrap();
        }
        for v in 1..=self.n {
            writeln!(out, "{} {}", v, self.label(v).unwrap_or(0)).unwrap();
        }
        out
    }
}

impl FromStr for LabeledGraph {
    type Err = GraphError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let parse_err = |line: usize, msg: &str| GraphError::Parse {
            line,
            msg: msg.to_string(),
        };
        let ints = |line: usize, s: &str, want: usize| -> Result<Vec<usize>, GraphError> {
            let v: Result<Vec<usize>, _> = s.split_whitespace().map(str::parse).collect();
            let v = v.map_err(|e| parse_err(line, &e.to_string()))?;
            if v.len() != want {
                return Err(parse_err(line, &format!("expected {want} integers")));
            }
            Ok(v)
        };

        let (hl, header) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
        let h = ints(hl, header, 3)?;
        let (n, m, label_count) = (h[0], h[1], h[2]);

        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, s) = lines.next().ok_or_else(|| parse_err(0, "missing edge line"))?;
            let e = ints(ln, s, 2)?;
            edges.push((e[0], e[1]));
        }

        let mut labels: Vec<Option<Label>> = vec![None; n];
        for _ in 0..n {
            let (ln, s) = lines.next().ok_or_else(|| parse_err(0, "missing label line"))?;
            let e = ints(ln, s, 2)?;
            let (v, lab) = (e[0], e[1]);
            if v == 0 || v > n {
                return Err(GraphError::VertexOutOfRange { vertex: v, n });
            }
            if label_count > 0 && lab >= label_count {
                return Err(parse_err(ln, &format!("label {lab} >= L={label_count}")));
            }
            if labels[v - 1].replace(lab as Label).is_some() {
                return Err(parse_err(ln, &format!("vertex {v} labeled twice")));
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content"));
        }
        let labels: Vec<Label> = labels.into_iter().map(|l| l.unwrap()).collect();
        LabeledGraph::new(n, edges, Some(labels))
    }
}

/// A line of positions `1..=length` produced by a reduction, carrying the
/// labels of the original vertices it visits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathInstance {
    /// `walk[p - 1]` is the original vertex emitted at position `p`.
    walk: Vec<usize>,
    position_label: Vec<Label>,
    /// `origin_map[v - 1]` is the first position at which `v` is emitted.
    origin_map: Vec<usize>,
}

impl PathInstance {
    pub fn length(&self) -> usize {
        self.walk.len()
    }

    pub fn walk(&self) -> &[usize] {
        &self.walk
    }

    pub fn position_labels(&self) -> &[Label] {
        &self.position_label
    }

    /// Position presented to the learner when original vertex `v` arrives.
    pub fn position_of(&self, v: usize) -> usize {
        self.origin_map[v - 1]
    }

    pub fn origin_map(&self) -> &[usize] {
        &self.origin_map
    }

    /// Number of adjacent positions with different labels.
    pub fn cutsize(&self) -> usize {
        self.position_label
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count()
    }

    /// The identity instance for a graph that already is the line `1..=n`.
    pub fn identity(labels: Vec<Label>) -> Self {
        let n = labels.len();
        Self {
            walk: (1..=n).collect(),
            position_label: labels,
            origin_map: (1..=n).collect(),
        }
    }

    pub fn to_line_graph(&self) -> LabeledGraph {
        LabeledGraph::line(self.length(), Some(self.position_label.clone()))
            .expect("line graph is always valid")
    }
}

/// Number of edges whose endpoints carry different labels.
pub fn cutsize(g: &LabeledGraph) -> Result<usize, GraphError> {
    let labels = g.labels().ok_or(GraphError::Unlabeled)?;
    Ok(g.edges
        .iter()
        .filter(|&&(u, v)| labels[u - 1] != labels[v - 1])
        .count())
}

/// Minimum cutsize over all labelings that agree with `g`'s labels on the
/// `observed` vertices. Only defined for trees (lines included).
///
/// Unobserved vertices only ever need to take a label that some observed
/// vertex has, so the minimization runs a tree DP over observed labels.
pub fn observable_cutsize(g: &LabeledGraph, observed: &BTreeSet<usize>) -> Result<usize, GraphError> {
    if !g.is_tree() {
        return Err(GraphError::RequiresTree);
    }
    let labels = g.labels().ok_or(GraphError::Unlabeled)?;
    for &v in observed {
        if v == 0 || v > g.n {
            return Err(GraphError::VertexOutOfRange { vertex: v, n: g.n });
        }
    }
    let palette: Vec<Label> = observed
        .iter()
        .map(|&v| labels[v - 1])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if palette.len() <= 1 {
        return Ok(0);
    }

    let rooted = RootedTree::new(g)?;
    const INF: usize = usize::MAX / 4;
    let k = palette.len();
    let mut cost = vec![vec![0usize; k]; g.n + 1];
    for &v in rooted.preorder.iter().rev() {
        let mut row = vec![0usize; k];
        for &c in &rooted.children[v] {
            let child = &cost[c];
            let best = *child.iter().min().unwrap();
            for (a, r) in row.iter_mut().enumerate() {
                *r += child[a].min(best + 1);
            }
        }
        if observed.contains(&v) {
            let own = palette.binary_search(&labels[v - 1]).unwrap();
            for (a, r) in row.iter_mut().enumerate() {
                if a != own {
                    *r = INF;
                }
            }
        }
        cost[v] = row;
    }
    Ok(*cost[1].iter().min().unwrap())
}

/// A tree rooted at vertex 1 with children in ascending id order.
#[derive(Debug, Clone)]
pub struct RootedTree {
    children: Vec<Vec<usize>>,
    preorder: Vec<usize>,
}

impl RootedTree {
    pub fn new(g: &LabeledGraph) -> Result<Self, GraphError> {
        if !g.is_tree() {
            return Err(GraphError::NotATree);
        }
        let mut children = vec![Vec::new(); g.n + 1];
        let mut preorder = Vec::with_capacity(g.n);
        let mut stack = vec![(1usize, 0usize)];
        while let Some((v, parent)) = stack.pop() {
            preorder.push(v);
            let kids: Vec<usize> = g.neighbors(v).iter().copied().filter(|&w| w != parent).collect();
            for &c in kids.iter().rev() {
                stack.push((c, v));
            }
            children[v] = kids;
        }
        Ok(Self { children, preorder })
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }
}

/// Children of `vertex` when `tree` is rooted at vertex 1, ascending.
pub fn dfs_child_order(tree: &LabeledGraph, vertex: usize) -> Result<Vec<usize>, GraphError> {
    Ok(RootedTree::new(tree)?.children(vertex).to_vec())
}

/// Linearizes a labeled tree by a depth-first walk from vertex 1 that crosses
/// every edge twice, once down and once back. The walk has `2n - 1` positions
/// and each step crosses one tree edge, so the line's cutsize is at most
/// twice the tree's.
pub fn euler_spine(g: &LabeledGraph) -> Result<PathInstance, GraphError> {
    let labels = g.labels().ok_or(GraphError::Unlabeled)?;
    let rooted = RootedTree::new(g)?;

    let mut walk = Vec::with_capacity(2 * g.n - 1);
    let mut origin_map = vec![0usize; g.n];
    // (vertex, index of next child to descend into)
    let mut stack: Vec<(usize, usize)> = vec![(1, 0)];
    walk.push(1);
    origin_map[0] = 1;
    while let Some(top) = stack.last_mut() {
        let (v, next) = *top;
        if let Some(&c) = rooted.children(v).get(next) {
            top.1 += 1;
            walk.push(c);
            origin_map[c - 1] = walk.len();
            stack.push((c, 0));
        } else {
            stack.pop();
            if let Some(&(parent, _)) = stack.last() {
                walk.push(parent);
            }
        }
    }
    let position_label = walk.iter().map(|&v| labels[v - 1]).collect();
    Ok(PathInstance {
        walk,
        position_label,
        origin_map,
    })
}

/// Draws a uniformly random spanning tree with Wilson's algorithm
/// (loop-erased random walks rooted at vertex 1). Labels are copied over.
pub fn wilson_ust<R: Rng + ?Sized>(g: &LabeledGraph, rng: &mut R) -> Result<LabeledGraph, GraphError> {
    if g.n == 0 || !g.is_connected() {
        return Err(GraphError::NotConnected);
    }
    let n = g.n;
    let mut in_tree = vec![false; n + 1];
    let mut next = vec![0usize; n + 1];
    in_tree[1] = true;
    for start in 2..=n {
        // Walking and overwriting `next` erases loops implicitly.
        let mut u = start;
        while !in_tree[u] {
            let nbrs = g.neighbors(u);
            next[u] = nbrs[rng.gen_range(0..nbrs.len())];
            u = next[u];
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            u = next[u];
        }
    }
    let mut edges: Vec<(usize, usize)> = (2..=n).map(|v| (v.min(next[v]), v.max(next[v]))).collect();
    edges.sort_unstable();
    LabeledGraph::new(n, edges, g.labels.clone())
}

/// Uniform random labeled tree on `n` vertices via a random Prüfer sequence.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> LabeledGraph {
    if n <= 1 {
        return LabeledGraph::new(n, Vec::new(), None).unwrap();
    }
    if n == 2 {
        return LabeledGraph::new(2, vec![(1, 2)], None).unwrap();
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(1..=n)).collect();
    let mut degree = vec![1usize; n + 1];
    for &v in &prufer {
        degree[v] += 1;
    }
    let mut leaves: BTreeSet<usize> = (1..=n).filter(|&v| degree[v] == 1).collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &v in &prufer {
        let leaf = leaves.pop_first().unwrap();
        edges.push((leaf.min(v), leaf.max(v)));
        degree[v] -= 1;
        if degree[v] == 1 {
            leaves.insert(v);
        }
    }
    let a = leaves.pop_first().unwrap();
    let b = leaves.pop_first().unwrap();
    edges.push((a, b));
    edges.sort_unstable();
    LabeledGraph::new(n, edges, None).unwrap()
}

/// Erdős–Rényi `G(n, p)`, redrawn until connected (at most `attempts` draws).
pub fn random_connected_gnp<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    attempts: usize,
    rng: &mut R,
) -> Result<LabeledGraph, GraphError> {
    for _ in 0..attempts {
        let mut edges = Vec::new();
        for u in 1..=n {
            for v in u + 1..=n {
                if rng.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let g = LabeledGraph::new(n, edges, None)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(GraphError::NotConnected)
}

/// Labels vertices `1..=n` with `f + 1` contiguous, near-equal id blocks.
/// On a line this yields exactly `min(f, n - 1)` cut edges.
pub fn block_labels(n: usize, f: usize) -> Vec<Label> {
    let blocks = (f + 1).min(n.max(1));
    (0..n).map(|i| (i * blocks / n) as Label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: Label = 0;
    const B: Label = 1;

    fn star(labels: Vec<Label>) -> LabeledGraph {
        let n = labels.len();
        LabeledGraph::new(n, (2..=n).map(|v| (1, v)).collect(), Some(labels)).unwrap()
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert_eq!(
            LabeledGraph::new(3, vec![(1, 1)], None),
            Err(GraphError::SelfLoop(1))
        );
        assert_eq!(
            LabeledGraph::new(3, vec![(1, 2), (2, 1)], None),
            Err(GraphError::DuplicateEdge(2, 1))
        );
        assert!(matches!(
            LabeledGraph::new(3, vec![(1, 4)], None),
            Err(GraphError::VertexOutOfRange { vertex: 4, .. })
        ));
        assert!(matches!(
            LabeledGraph::line(3, Some(vec![0, 0])),
            Err(GraphError::LabelCount { .. })
        ));
    }

    #[test]
    fn cutsize_examples() {
        let g = LabeledGraph::line(3, Some(vec![A, A, A])).unwrap();
        assert_eq!(cutsize(&g), Ok(0));
        let g = LabeledGraph::line(4, Some(vec![A, A, B, B])).unwrap();
        assert_eq!(cutsize(&g), Ok(1));
        // edges (1,2),(1,3),(1,4): A-B cut, A-B cut, A-A not
        assert_eq!(cutsize(&star(vec![A, B, B, A])), Ok(2));
        let g = LabeledGraph::line(3, None).unwrap();
        assert_eq!(cutsize(&g), Err(GraphError::Unlabeled));
    }

    #[test]
    fn observable_cutsize_examples() {
        let ends: BTreeSet<usize> = [1, 5].into();
        let g = LabeledGraph::line(5, Some(vec![A, B, B, B, A])).unwrap();
        assert_eq!(observable_cutsize(&g, &ends), Ok(0));
        let g = LabeledGraph::line(5, Some(vec![A, A, B, A, B])).unwrap();
        assert_eq!(observable_cutsize(&g, &ends), Ok(1));
        let g = LabeledGraph::line(4, Some(vec![A, B, A, B])).unwrap();
        let all: BTreeSet<usize> = (1..=4).collect();
        assert_eq!(observable_cutsize(&g, &all), Ok(3));
        assert_eq!(observable_cutsize(&g, &BTreeSet::new()), Ok(0));
    }

    #[test]
    fn observable_cutsize_rejects_cycles() {
        let g = LabeledGraph::new(3, vec![(1, 2), (2, 3), (1, 3)], Some(vec![A, A, B])).unwrap();
        assert_eq!(
            observable_cutsize(&g, &[1].into()),
            Err(GraphError::RequiresTree)
        );
    }

    #[test]
    fn child_order() {
        let g = LabeledGraph::new(3, vec![(1, 3), (1, 2)], None).unwrap();
        assert_eq!(dfs_child_order(&g, 1).unwrap(), vec![2, 3]);
        assert_eq!(dfs_child_order(&g, 3).unwrap(), Vec::<usize>::new());
        // vertex 1 in the middle of the path 2 - 1 - 3
        let g = LabeledGraph::new(3, vec![(2, 1), (1, 3)], None).unwrap();
        assert_eq!(dfs_child_order(&g, 1).unwrap(), vec![2, 3]);
    }

    #[test]
    fn spine_examples() {
        let single = LabeledGraph::new(1, vec![], Some(vec![A])).unwrap();
        let s = euler_spine(&single).unwrap();
        assert_eq!(s.length(), 1);
        assert_eq!(s.cutsize(), 0);

        let path = LabeledGraph::line(3, Some(vec![A, A, B])).unwrap();
        let s = euler_spine(&path).unwrap();
        assert_eq!(s.walk(), &[1, 2, 3, 2, 1]);
        assert_eq!(s.position_labels(), &[A, A, B, A, A]);
        assert_eq!(s.cutsize(), 2);
        assert_eq!(s.origin_map(), &[1, 2, 3]);

        let s = euler_spine(&star(vec![A, B, A])).unwrap();
        assert_eq!(s.walk(), &[1, 2, 1, 3, 1]);
        assert!(s.cutsize() <= 2);
    }

    #[test]
    fn spine_rejects_non_trees() {
        let cyc = LabeledGraph::new(3, vec![(1, 2), (2, 3), (1, 3)], Some(vec![A; 3])).unwrap();
        assert_eq!(euler_spine(&cyc), Err(GraphError::NotATree));
        let forest = LabeledGraph::new(3, vec![(1, 2)], Some(vec![A; 3])).unwrap();
        assert_eq!(euler_spine(&forest), Err(GraphError::NotATree));
    }

    #[test]
    fn wilson_on_tree_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tree(20, &mut rng).with_labels(vec![0; 20]).unwrap();
        for _ in 0..10 {
            let s = wilson_ust(&t, &mut rng).unwrap();
            assert_eq!(s.canonical_edges(), t.canonical_edges());
            assert_eq!(s.labels(), t.labels());
        }
    }

    #[test]
    fn wilson_rejects_disconnected() {
        let g = LabeledGraph::new(4, vec![(1, 2), (3, 4)], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(wilson_ust(&g, &mut rng), Err(GraphError::NotConnected));
    }

    #[test]
    fn text_format_round_trip() {
        let text = "# a path\n4 3 2\n1 2\n2 3\n3 4 # tail\n1 0\n2 0\n3 1\n4 1\n";
        let g: LabeledGraph = text.parse().unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(cutsize(&g), Ok(1));
        let again: LabeledGraph = g.to_text().parse().unwrap();
        assert_eq!(again, g);
        assert!("2 1 1\n1 2\n1 0\n".parse::<LabeledGraph>().is_err());
        assert!("2 1 1\n1 2\n1 0\n2 5\n".parse::<LabeledGraph>().is_err());
    }

    #[test]
    fn block_labels_give_f_cuts_on_a_line() {
        for (n, f) in [(64, 2), (64, 1), (5, 4), (5, 10), (7, 0)] {
            let g = LabeledGraph::line(n, Some(block_labels(n, f))).unwrap();
            assert_eq!(cutsize(&g).unwrap(), f.min(n - 1));
        }
    }

    #[test]
    fn prufer_trees_are_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..40 {
            assert!(random_tree(n, &mut rng).is_tree());
        }
    }
}
