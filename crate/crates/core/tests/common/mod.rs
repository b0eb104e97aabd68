//! Fixtures and independent oracles shared by the integration suites.
#![allow(dead_code)]

use fedgls::graph::{Graph, Masks, Partition};
use fedgls::losses::{classification_objective, distillation_objective, structure_objective};
use fedgls::models::{
    adjacency_process, gcn_forward, graph_generator_forward, EncoderParams, GcnParams, Head, LearnerConfig,
    LearnerParams, LearnerVariant, Parameters,
};
use fedgls::numerics::{compare_gradients, finite_diff_grad, matmul, GradCheckReport, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
/// Fixtures with any kink input closer than this are redrawn.
const KINK_MARGIN: f64 = 1e-3;
const HIDDEN: usize = 4;
const CLASSES: usize = 3;

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn near_kink(m: &Matrix) -> bool {
    m.as_slice().iter().any(|&v| v != 0.0 && v.abs() < KINK_MARGIN)
}

/// Every row keeps a clear gap between its k-th and (k+1)-th largest value.
fn top_k_is_stable(s: &Matrix, k: usize) -> bool {
    (0..s.rows()).all(|i| {
        let mut row = s.row(i).to_vec();
        row.sort_by(|a, b| b.total_cmp(a));
        k >= row.len() || row[k - 1] - row[k] > KINK_MARGIN
    })
}

pub struct StructureFixture {
    pub x: Matrix,
    pub omega: LearnerParams,
    pub cfg: LearnerConfig,
    pub theta: GcnParams,
    pub h: Matrix,
    pub tau: f64,
}

impl StructureFixture {
    /// Draws fixtures until one sits away from every kink: ReLU
    /// pre-activations, zero-norm embeddings, top-k boundaries, near-zero
    /// kept similarities, and GCN pre-activations.
    pub fn sample(seed: u64, variant: LearnerVariant) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.random_range(4..=8);
            let d = rng.random_range(3..=6);
            let k = rng.random_range(2..n);
            let x = uniform(n, d, -1.0, 1.0, &mut rng);
            let omega = LearnerParams::init_perturbed(variant, d, 2, &mut rng);
            let cfg = LearnerConfig { k, ..LearnerConfig::default() };
            let theta = GcnParams::init(d, HIDDEN, CLASSES, &mut rng);
            let h = uniform(n, HIDDEN, -1.0, 1.0, &mut rng);
            let fx = StructureFixture { x, omega, cfg, theta, h, tau: rng.random_range(0.2..1.0) };
            if fx.is_smooth() {
                return fx;
            }
        }
    }

    fn is_smooth(&self) -> bool {
        let gen = graph_generator_forward(&self.x, &self.omega, self.cfg.activation).unwrap();
        if gen.pre_activations().iter().any(near_kink) {
            return false;
        }
        let emb = gen.embedding();
        if (0..emb.rows()).any(|i| emb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() < KINK_MARGIN) {
            return false;
        }
        if !top_k_is_stable(&gen.s_tilde, self.cfg.k) {
            return false;
        }
        let adj = adjacency_process(&gen.s_tilde, &self.cfg).unwrap();
        if near_kink(&adj.sparse) {
            return false;
        }
        let pre1 = matmul(&matmul(&adj.s, &self.x).unwrap(), &self.theta.w1).unwrap();
        let z = gcn_forward(&self.x, &adj.s, &self.theta).unwrap().z;
        !near_kink(&pre1) && (0..z.rows()).all(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() > KINK_MARGIN)
    }

    pub fn check(&self) -> GradCheckReport {
        let out = structure_objective(&self.x, &self.omega, &self.cfg, &self.theta, &self.h, self.tau).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let mut omega = self.omega.clone();
                omega.assign_flat(v);
                structure_objective(&self.x, &omega, &self.cfg, &self.theta, &self.h, self.tau).unwrap().value
            },
            &self.omega.flatten(),
            FD_STEP,
        )
        .unwrap();
        compare_gradients(&out.grads.flatten(), &numeric, GRAD_TOL)
    }
}

pub struct ClassificationFixture {
    pub x: Matrix,
    pub s: Matrix,
    pub theta: GcnParams,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
}

impl ClassificationFixture {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.random_range(4..=8);
            let d = rng.random_range(3..=6);
            let x = uniform(n, d, -1.0, 1.0, &mut rng);
            let edges: Vec<(usize, usize)> =
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.random_bool(0.4)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..CLASSES)).collect();
            let train: Vec<usize> = (0..n).filter(|i| i % 2 == 0 || rng.random_bool(0.5)).collect();
            let g = Graph::new(x.clone(), edges, labels.clone(), Masks::default()).unwrap();
            let s = fedgls::graph::normalize_adjacency(&g, true);
            let theta = GcnParams::init(d, HIDDEN, CLASSES, &mut rng);
            let pre1 = matmul(&matmul(&s, &x).unwrap(), &theta.w1).unwrap();
            if !near_kink(&pre1) {
                return Self { x, s, theta, labels, train };
            }
        }
    }

    pub fn check(&self) -> GradCheckReport {
        let out = classification_objective(&self.x, &self.s, &self.theta, &self.labels, &self.train).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let mut theta = self.theta.clone();
                theta.assign_flat(v);
                classification_objective(&self.x, &self.s, &theta, &self.labels, &self.train).unwrap().value
            },
            &self.theta.flatten(),
            FD_STEP,
        )
        .unwrap();
        compare_gradients(&out.grads.flatten(), &numeric, GRAD_TOL)
    }
}

pub struct DistillationFixture {
    pub x: Matrix,
    pub z: Matrix,
    pub phi: EncoderParams,
    pub head: Head,
}

impl DistillationFixture {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.random_range(4..=8);
            let d = rng.random_range(3..=6);
            let x = uniform(n, d, -1.0, 1.0, &mut rng);
            let z = uniform(n, HIDDEN, -1.5, 1.5, &mut rng);
            let mut phi = EncoderParams::init(d, HIDDEN, &mut rng);
            phi.b1 = uniform(1, HIDDEN, -0.3, 0.3, &mut rng);
            phi.b2 = uniform(1, HIDDEN, -0.3, 0.3, &mut rng);
            let head = Head { w: uniform(HIDDEN, CLASSES, -1.0, 1.0, &mut rng), b: uniform(1, CLASSES, -0.5, 0.5, &mut rng) };
            let pre1 = matmul(&x, &phi.w1).unwrap().add_row_broadcast(&phi.b1).unwrap();
            if !near_kink(&pre1) {
                return Self { x, z, phi, head };
            }
        }
    }

    pub fn check(&self) -> GradCheckReport {
        let out = distillation_objective(&self.x, &self.z, &self.phi, &self.head).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let mut phi = self.phi.clone();
                phi.assign_flat(v);
                distillation_objective(&self.x, &self.z, &phi, &self.head).unwrap().value
            },
            &self.phi.flatten(),
            FD_STEP,
        )
        .unwrap();
        compare_gradients(&out.grads.flatten(), &numeric, GRAD_TOL)
    }
}

pub fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(Matrix::zeros(n, 1), edges.to_vec(), vec![0; n], Masks::default()).unwrap()
}

/// Newman modularity straight from the definition
/// `Q = (1/2m) Σᵢⱼ [Aᵢⱼ − kᵢkⱼ/2m] δ(cᵢ, cⱼ)`.
pub fn modularity_oracle(g: &Graph, assignment: &[usize]) -> f64 {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in &g.edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if assignment[i] == assignment[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Maximum modularity over every set partition of the nodes
/// (restricted growth strings).
pub fn brute_force_max_modularity(g: &Graph) -> (f64, Vec<usize>) {
    let n = g.num_nodes();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut rgs = vec![0usize; n];
    fn recurse(i: usize, max: usize, rgs: &mut Vec<usize>, g: &Graph, best: &mut (f64, Vec<usize>)) {
        if i == rgs.len() {
            let q = modularity_oracle(g, rgs);
            if q > best.0 {
                *best = (q, rgs.clone());
            }
            return;
        }
        for c in 0..=max + 1 {
            rgs[i] = c;
            recurse(i + 1, max.max(c), rgs, g, best);
        }
    }
    if n > 0 {
        recurse(1, 0, &mut rgs, g, &mut best);
    }
    best
}

/// No single node can move to another existing community (or a new one) and
/// raise modularity by more than `tol`.
pub fn is_single_move_local_optimum(g: &Graph, p: &Partition, tol: f64) -> bool {
    let q = modularity_oracle(g, &p.assignment);
    let mut trial = p.assignment.clone();
    for i in 0..g.num_nodes() {
        let original = trial[i];
        for c in 0..=p.num_communities {
            trial[i] = c;
            if modularity_oracle(g, &trial) > q + tol {
                return false;
            }
        }
        trial[i] = original;
    }
    true
}

/// Small graphs used by the Louvain oracle: named structures plus seeded
/// random graphs, all with at most 8 nodes.
pub fn louvain_fixtures() -> Vec<(String, Graph)> {
    let mut out = vec![
        ("two-triangles".to_string(), graph(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])),
        ("path-8".into(), graph(8, &(0..7).map(|i| (i, i + 1)).collect::<Vec<_>>())),
        ("cycle-8".into(), graph(8, &(0..8).map(|i| (i, (i + 1) % 8)).collect::<Vec<_>>())),
        ("star-7".into(), graph(7, &(1..7).map(|i| (0, i)).collect::<Vec<_>>())),
        ("clique-5".into(), graph(5, &(0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect::<Vec<_>>())),
        (
            "barbell-4-4".into(),
            graph(8, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7), (3, 4)]),
        ),
        ("triangle-plus-edge".into(), graph(5, &[(0, 1), (1, 2), (0, 2), (3, 4)])),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for r in 0..13 {
        let n = rng.random_range(5..=8);
        let p = rng.random_range(0.25..0.6);
        let mut edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.random_bool(p)).collect();
        if edges.is_empty() {
            edges.push((0, 1));
        }
        out.push((format!("random-{r}"), graph(n, &edges)));
    }
    out
}
