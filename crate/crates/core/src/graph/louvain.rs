//! Two-phase Louvain modularity optimization (local moves + contraction).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Partition};
use crate::error::{Error, Result};

/// Weighted symmetric adjacency; `adj[i]` holds `(j, A_ij)` including a
/// self entry after contraction. `A_ii` counts internal weight twice so that
/// degrees and the total `2m` are preserved across levels.
#[derive(Debug, Clone)]
struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    fn from_graph(g: &Graph) -> Self {
        let mut adj = vec![Vec::new(); g.num_nodes()];
        for &(a, b) in &g.edges {
            adj[a].push((b, 1.0));
            adj[b].push((a, 1.0));
        }
        Self { adj }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn degree(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|&(_, w)| w).sum()
    }

    fn contract(&self, community: &[usize], k: usize) -> Self {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        for (i, row) in self.adj.iter().enumerate() {
            for &(j, w) in row {
                *acc[community[i]].entry(community[j]).or_insert(0.0) += w;
            }
        }
        Self { adj: acc.into_iter().map(|m| m.into_iter().collect()).collect() }
    }
}

/// Louvain settings. Resolution 1.0 gives standard Newman modularity.
#[derive(Debug, Clone)]
pub struct Louvain {
    pub resolution: f64,
    pub seed: u64,
    pub max_levels: usize,
    pub max_passes: usize,
    pub min_gain: f64,
}

impl Default for Louvain {
    fn default() -> Self {
        Self { resolution: 1.0, seed: 0, max_levels: 32, max_passes: 128, min_gain: 1e-12 }
    }
}

impl Louvain {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn run(&self, g: &Graph) -> Result<Partition> {
        if g.edges.is_empty() {
            return Err(Error::Parameter("louvain partitioning of an edgeless graph is undefined".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut level_graph = WeightedGraph::from_graph(g);
        let mut node_comm: Vec<usize> = (0..g.num_nodes()).collect();
        let mut best_q = modularity_weighted(&level_graph, &(0..level_graph.len()).collect::<Vec<_>>(), self.resolution);

        for _ in 0..self.max_levels {
            let (comm, moved) = self.local_moves(&level_graph, &mut rng);
            if !moved {
                break;
            }
            let relabeled = Partition::from_assignment(&comm);
            let q = modularity_weighted(&level_graph, &relabeled.assignment, self.resolution);
            if q <= best_q + self.min_gain {
                break;
            }
            best_q = q;
            for c in node_comm.iter_mut() {
                *c = relabeled.assignment[*c];
            }
            level_graph = level_graph.contract(&relabeled.assignment, relabeled.num_communities);
        }
        Ok(Partition::from_assignment(&node_comm))
    }

    /// Phase one: greedily move single nodes to the neighbouring community
    /// with the largest modularity gain until no move helps.
    fn local_moves(&self, g: &WeightedGraph, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = g.len();
        let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
        let two_m: f64 = degree.iter().sum();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut total: Vec<f64> = degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut any_move = false;
        for _ in 0..self.max_passes {
            let mut moved = false;
            for &i in &order {
                let current = comm[i];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for &(j, w) in &g.adj[i] {
                    if j != i {
                        *links.entry(comm[j]).or_insert(0.0) += w;
                    }
                }
                total[current] -= degree[i];
                let gain = |c: usize, w_ic: f64| w_ic - self.resolution * total[c] * degree[i] / two_m;
                let stay = gain(current, links.get(&current).copied().unwrap_or(0.0));
                let mut best = (current, stay);
                for (&c, &w) in &links {
                    let gc = gain(c, w);
                    if gc > best.1 + self.min_gain {
                        best = (c, gc);
                    }
                }
                total[best.0] += degree[i];
                if best.0 != current {
                    comm[i] = best.0;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, any_move)
    }
}

pub fn louvain_partition(g: &Graph, seed: u64) -> Result<Partition> {
    Louvain::with_seed(seed).run(g)
}

fn modularity_weighted(g: &WeightedGraph, comm: &[usize], resolution: f64) -> f64 {
    let k = comm.iter().max().map_or(0, |&m| m + 1);
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    let mut two_m = 0.0;
    for (i, row) in g.adj.iter().enumerate() {
        for &(j, w) in row {
            two_m += w;
            total[comm[i]] += w;
            if comm[i] == comm[j] {
                internal[comm[i]] += w;
            }
        }
    }
    if two_m == 0.0 {
        return 0.0;
    }
    internal.iter().zip(&total).map(|(&a, &t)| a / two_m - resolution * (t / two_m).powi(2)).sum()
}

/// Newman modularity (resolution 1) of `p` on the unweighted graph `g`.
pub fn modularity(g: &Graph, p: &Partition) -> f64 {
    modularity_weighted(&WeightedGraph::from_graph(g), &p.assignment, 1.0)
}

/// Repeatedly folds the smallest community below `min_size` into the
/// neighbouring community it shares the most edges with (lowest id on ties;
/// the smallest other community if it has no neighbours).
pub fn merge_small_communities(g: &Graph, p: &Partition, min_size: usize) -> Partition {
    let mut current = Partition::from_assignment(&p.assignment);
    loop {
        if current.num_communities <= 1 {
            return current;
        }
        let sizes: Vec<usize> = current.members().iter().map(Vec::len).collect();
        let Some(small) = (0..sizes.len()).filter(|&c| sizes[c] < min_size).min_by_key(|&c| (sizes[c], c)) else {
            return current;
        };
        let mut links: BTreeMap<usize, usize> = BTreeMap::new();
        for &(a, b) in &g.edges {
            let (ca, cb) = (current.assignment[a], current.assignment[b]);
            if ca == small && cb != small {
                *links.entry(cb).or_default() += 1;
            } else if cb == small && ca != small {
                *links.entry(ca).or_default() += 1;
            }
        }
        let target = match links.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            Some((&c, _)) => c,
            None => (0..sizes.len()).filter(|&c| c != small).min_by_key(|&c| (sizes[c], c)).expect(">1 community"),
        };
        let merged: Vec<usize> = current.assignment.iter().map(|&c| if c == small { target } else { c }).collect();
        current = Partition::from_assignment(&merged);
    }
}
