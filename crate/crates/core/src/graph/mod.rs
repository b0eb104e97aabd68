//! Attributed graphs and everything that produces per-client graphs:
//! adjacency normalization, kNN construction, Louvain partitioning,
//! synthetic SBM generation and train/val/test splitting.

mod louvain;
mod sbm;
mod split;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use louvain::{louvain_partition, merge_small_communities, modularity, Louvain};
pub use sbm::{sbm_generate, SbmConfig, SbmSystem};
pub use split::{split_masks, SplitRatios};

/// Disjoint node index sets for supervised training and evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Data(format!("mask index {i} out of range for {n} nodes")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("node {i} appears in more than one mask")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// One client's attributed graph. Edges are undirected, stored once with
/// `u < v`, and never include self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub x: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

impl Graph {
    pub fn new(x: Matrix, edges: Vec<(usize, usize)>, labels: Vec<usize>, masks: Masks) -> Result<Self> {
        let n = x.rows();
        if labels.len() != n {
            return Err(Error::Data(format!("{} labels for {n} nodes", labels.len())));
        }
        let mut canon = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Data(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Data(format!("self-loop on node {a}")));
            }
            canon.insert((a.min(b), a.max(b)));
        }
        masks.validate(n)?;
        Ok(Self { x, edges: canon.into_iter().collect(), labels, masks })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Same nodes, features, labels and masks, with no edges.
    pub fn without_edges(&self) -> Graph {
        Graph { edges: Vec::new(), ..self.clone() }
    }

    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Graph> {
        Graph::new(self.x.clone(), edges, self.labels.clone(), self.masks.clone())
    }

    /// Subgraph induced by `nodes` (in the given order). Edges leaving the
    /// set are dropped and masks are reset.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            local[old] = new;
        }
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(nodes.len() * d);
        for &old in nodes {
            data.extend_from_slice(self.x.row(old));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
            .map(|&(a, b)| (local[a].min(local[b]), local[a].max(local[b])))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Graph {
            x: Matrix::from_vec(nodes.len(), d, data).expect("row count matches"),
            edges,
            labels: nodes.iter().map(|&i| self.labels[i]).collect(),
            masks: Masks::default(),
        }
    }
}

/// Node-to-community assignment with contiguous ids starting at 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub num_communities: usize,
}

impl Partition {
    /// Relabels arbitrary ids to `0..k` in order of first appearance.
    pub fn from_assignment(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment: Vec<usize> = raw
            .iter()
            .map(|c| {
                let next = map.len();
                *map.entry(*c).or_insert(next)
            })
            .collect();
        Partition { num_communities: map.len(), assignment }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_communities];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

/// Dense `D^{-1/2}(A [+ I])D^{-1/2}`. Without self-loops an isolated node
/// gets an all-zero row.
pub fn normalize_adjacency(g: &Graph, add_self_loops: bool) -> Matrix {
    let n = g.num_nodes();
    let mut a = if add_self_loops { Matrix::identity(n) } else { Matrix::zeros(n, n) };
    for &(u, v) in &g.edges {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    let deg = a.row_sums();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                a[(i, j)] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    a
}

/// Symmetrized kNN edge set: `(i, j)` is kept when either endpoint picked the
/// other among its `k` nearest. Ties go to the lower node index.
pub fn knn_graph(x: &Matrix, k: usize, metric: Metric) -> Result<Vec<(usize, usize)>> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("knn requires 1 <= k < n, got k={k}, n={n}")));
    }
    // smaller score = closer
    let score: Box<dyn Fn(usize, usize) -> f64> = match metric {
        Metric::Cosine => {
            let sim = crate::numerics::cosine_sim_matrix(x, x)?;
            Box::new(move |i, j| -sim[(i, j)])
        }
        Metric::Euclidean => Box::new(|i, j| {
            x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }),
    };
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (score(i, j), j)).collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    Ok(edges.into_iter().collect())
}
