//! Graph learner: an encoder followed by cosine similarity produces a dense
//! similarity matrix, which the adjacency processor turns into a sparse,
//! symmetric, nonnegative, degree-normalized adjacency.
//!
//! Top-k selection is treated as a constant mask during backpropagation, so
//! only the surviving entries receive value gradients.

use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};
use crate::numerics::{cosine_sim_backward, cosine_sim_matrix, matmul, matmul_nt, matmul_tn, Activation, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LearnerVariant {
    Mlp,
    #[default]
    Attentive,
}

impl std::str::FromStr for LearnerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(LearnerVariant::Mlp),
            "attentive" => Ok(LearnerVariant::Attentive),
            other => Err(Error::Config(format!("unknown learner variant '{other}'"))),
        }
    }
}

/// Per-layer weights: `d x d` matrices for the MLP variant, `1 x d` vectors
/// for the attentive (Hadamard) variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub variant: LearnerVariant,
    pub layers: Vec<Matrix>,
}

impl LearnerParams {
    /// Identity initialization: all-ones vectors (attentive) or identity
    /// matrices (MLP), so the initial graph is the cosine kNN graph of the
    /// activated features.
    pub fn init(variant: LearnerVariant, d: usize, depth: usize) -> Self {
        let layer = || match variant {
            LearnerVariant::Mlp => Matrix::identity(d),
            LearnerVariant::Attentive => Matrix::filled(1, d, 1.0),
        };
        Self { variant, layers: (0..depth).map(|_| layer()).collect() }
    }

    /// Identity initialization plus uniform noise: ±0.1 per attentive weight,
    /// ±0.1/d per MLP entry.
    pub fn init_perturbed(variant: LearnerVariant, d: usize, depth: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        use rand::Rng;
        let mut p = Self::init(variant, d, depth);
        let scale = match variant {
            LearnerVariant::Mlp => 0.1 / d as f64,
            LearnerVariant::Attentive => 0.1,
        };
        for layer in &mut p.layers {
            for v in layer.as_mut_slice() {
                *v += rng.random_range(-scale..scale);
            }
        }
        p
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols())
    }
}

impl Parameters for LearnerParams {
    fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Entries kept per row by the sparsification step.
    pub k: usize,
    /// Encoder nonlinearity.
    pub activation: Activation,
    /// Nonlinearity applied before symmetrization; relu keeps the output nonnegative.
    pub sym_activation: Activation,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { k: 10, activation: Activation::Relu, sym_activation: Activation::Relu }
    }
}

#[derive(Debug)]
pub struct GeneratorTrace<'a> {
    x: &'a Matrix,
    activation: Activation,
    /// pre-activations per layer
    pre: Vec<Matrix>,
    /// activated outputs per layer; the last one is the embedding
    out: Vec<Matrix>,
    pub s_tilde: Matrix,
}

impl GeneratorTrace<'_> {
    pub fn embedding(&self) -> &Matrix {
        self.out.last().unwrap_or(self.x)
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

fn hadamard_rows(r: &Matrix, w: &Matrix) -> Matrix {
    let mut out = r.clone();
    for i in 0..r.rows() {
        for (v, wj) in out.row_mut(i).iter_mut().zip(w.as_slice()) {
            *v *= wj;
        }
    }
    out
}

/// `S̃ = cos(Enc(X; ω), Enc(X; ω))`
pub fn graph_generator_forward<'a>(x: &'a Matrix, omega: &LearnerParams, activation: Activation) -> Result<GeneratorTrace<'a>> {
    let d = x.cols();
    let mut pre = Vec::with_capacity(omega.layers.len());
    let mut out: Vec<Matrix> = Vec::with_capacity(omega.layers.len());
    for w in &omega.layers {
        let input = out.last().unwrap_or(x);
        let p = match omega.variant {
            LearnerVariant::Mlp => {
                if w.rows() != input.cols() {
                    return Err(Error::shape("graph_generator_forward", format!("layer {:?} on width {}", w.shape(), input.cols())));
                }
                matmul(input, w)?
            }
            LearnerVariant::Attentive => {
                if w.shape() != (1, d) {
                    return Err(Error::shape("graph_generator_forward", format!("attentive weight {:?} for d={d}", w.shape())));
                }
                hadamard_rows(input, w)
            }
        };
        out.push(p.map(|v| activation.apply(v)));
        pre.push(p);
    }
    let emb = out.last().unwrap_or(x);
    let s_tilde = cosine_sim_matrix(emb, emb)?;
    Ok(GeneratorTrace { x, activation, pre, out, s_tilde })
}

pub fn graph_generator_backward(trace: &GeneratorTrace<'_>, omega: &LearnerParams, d_s_tilde: &Matrix) -> Result<LearnerParams> {
    let emb = trace.embedding();
    let (du, dv) = cosine_sim_backward(emb, emb, d_s_tilde)?;
    let mut d_out = du;
    d_out.axpy(1.0, &dv);
    let mut grads = omega.zeros_like();
    for l in (0..omega.layers.len()).rev() {
        let act = trace.activation;
        let d_pre = d_out.zip_map(&trace.pre[l], |g, p| g * act.derivative(p));
        let input = if l == 0 { trace.x } else { &trace.out[l - 1] };
        match omega.variant {
            LearnerVariant::Mlp => {
                grads.layers[l] = matmul_tn(input, &d_pre)?;
                d_out = matmul_nt(&d_pre, &omega.layers[l])?;
            }
            LearnerVariant::Attentive => {
                grads.layers[l] = d_pre.hadamard(input)?.col_sums();
                d_out = hadamard_rows(&d_pre, &omega.layers[l]);
            }
        }
    }
    Ok(grads)
}

/// Keeps the `k` largest entries of each row (ties to the lower column).
/// Returns the sparsified matrix and the 0/1 keep mask.
pub fn sparsify_top_k(s: &Matrix, k: usize) -> (Matrix, Matrix) {
    let (n, m) = s.shape();
    let mut mask = Matrix::zeros(n, m);
    let mut idx: Vec<usize> = Vec::with_capacity(m);
    for i in 0..n {
        let row = s.row(i);
        idx.clear();
        idx.extend(0..m);
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in idx.iter().take(k) {
            mask[(i, j)] = 1.0;
        }
    }
    (s.zip_map(&mask, |v, keep| v * keep), mask)
}

/// `(σ(S) + σ(S)ᵀ) / 2`
pub fn symmetrize(s: &Matrix, activation: Activation) -> Matrix {
    let a = s.map(|v| activation.apply(v));
    a.zip_map(&a.transpose(), |x, y| 0.5 * (x + y))
}

pub fn symmetrize_backward(s: &Matrix, activation: Activation, g: &Matrix) -> Matrix {
    let gs = g.zip_map(&g.transpose(), |x, y| 0.5 * (x + y));
    gs.zip_map(s, |gv, v| gv * activation.derivative(v))
}

/// `D^{-1/2} S D^{-1/2}` with `D` the row sums of `S`; rows with
/// nonpositive degree become zero. Returns the result and the degrees.
pub fn normalize_degrees(s: &Matrix) -> (Matrix, Vec<f64>) {
    let deg = s.row_sums();
    let mut out = s.clone();
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            out[(i, j)] = if deg[i] > 0.0 && deg[j] > 0.0 { s[(i, j)] / (deg[i] * deg[j]).sqrt() } else { 0.0 };
        }
    }
    (out, deg)
}

pub fn normalize_backward(s: &Matrix, deg: &[f64], g: &Matrix) -> Matrix {
    let n = s.rows();
    let inv: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    // dL/d(inv_i) collects every entry where inv_i appears, as row or column factor
    let mut d_inv = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let t = g[(i, j)] * s[(i, j)];
            d_inv[i] += t * inv[j];
            d_inv[j] += t * inv[i];
        }
    }
    let d_deg: Vec<f64> =
        deg.iter().zip(&d_inv).map(|(&d, &di)| if d > 0.0 { -0.5 * di * d.powf(-1.5) } else { 0.0 }).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = g[(i, j)] * inv[i] * inv[j] + d_deg[i];
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AdjacencyTrace {
    pub mask: Matrix,
    pub sparse: Matrix,
    pub sym: Matrix,
    pub degrees: Vec<f64>,
    pub s: Matrix,
}

/// Sparsify → symmetrize → normalize.
pub fn adjacency_process(s_tilde: &Matrix, cfg: &LearnerConfig) -> Result<AdjacencyTrace> {
    let (n, m) = s_tilde.shape();
    if n != m {
        return Err(Error::shape("adjacency_process", format!("{n}x{m} is not square")));
    }
    let (sparse, mask) = sparsify_top_k(s_tilde, cfg.k);
    let sym = symmetrize(&sparse, cfg.sym_activation);
    let (s, degrees) = normalize_degrees(&sym);
    Ok(AdjacencyTrace { mask, sparse, sym, degrees, s })
}

pub fn adjacency_process_backward(trace: &AdjacencyTrace, cfg: &LearnerConfig, d_s: &Matrix) -> Matrix {
    let d_sym = normalize_backward(&trace.sym, &trace.degrees, d_s);
    let d_sparse = symmetrize_backward(&trace.sparse, cfg.sym_activation, &d_sym);
    d_sparse.hadamard(&trace.mask).expect("same shape")
}
