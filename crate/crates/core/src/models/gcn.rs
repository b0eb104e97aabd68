use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, head_backward, Head, Parameters};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};

/// GCN weights (no layer biases) plus the classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub head: Head,
}

impl GcnParams {
    pub fn init(d: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { w1: glorot(d, hidden, rng), w2: glorot(hidden, hidden, rng), head: Head::init(hidden, classes, rng) }
    }

    pub fn embedding_width(&self) -> usize {
        self.w2.cols()
    }
}

impl Parameters for GcnParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.w2, &self.head.w, &self.head.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.w2, &mut self.head.w, &mut self.head.b]
    }
}

/// Intermediates of `z = S·relu(S·X·W1)·W2`, `logits = z·Wc + b`.
#[derive(Debug)]
pub struct GcnTrace<'a> {
    x: &'a Matrix,
    s: &'a Matrix,
    xw1: Matrix,
    pre1: Matrix,
    h1: Matrix,
    sh1: Matrix,
    pub z: Matrix,
    pub logits: Matrix,
}

pub fn gcn_forward<'a>(x: &'a Matrix, s: &'a Matrix, theta: &GcnParams) -> Result<GcnTrace<'a>> {
    let n = x.rows();
    if s.shape() != (n, n) {
        return Err(Error::shape("gcn_forward", format!("adjacency {:?} for {n} nodes", s.shape())));
    }
    let xw1 = matmul(x, &theta.w1)?;
    let pre1 = matmul(s, &xw1)?;
    let h1 = pre1.map(|v| v.max(0.0));
    let sh1 = matmul(s, &h1)?;
    let z = matmul(&sh1, &theta.w2)?;
    let logits = theta.head.logits(&z)?;
    Ok(GcnTrace { x, s, xw1, pre1, h1, sh1, z, logits })
}

/// Backpropagates upstream gradients on `z` and/or `logits`. Returns the
/// parameter gradients and, when `want_ds`, the gradient on the adjacency.
pub fn gcn_backward(
    trace: &GcnTrace<'_>,
    theta: &GcnParams,
    d_z: Option<&Matrix>,
    d_logits: Option<&Matrix>,
    want_ds: bool,
) -> Result<(GcnParams, Option<Matrix>)> {
    let (n, h) = trace.z.shape();
    let (head, mut d_z_total) = match d_logits {
        Some(dl) => head_backward(&trace.z, &theta.head, dl)?,
        None => (theta.head.zeros_like(), Matrix::zeros(n, h)),
    };
    if let Some(dz) = d_z {
        if dz.shape() != (n, h) {
            return Err(Error::shape("gcn_backward", format!("d_z {:?}", dz.shape())));
        }
        d_z_total.axpy(1.0, dz);
    }

    let w2 = matmul_tn(&trace.sh1, &d_z_total)?;
    let d_sh1 = matmul_nt(&d_z_total, &theta.w2)?;
    let d_h1 = matmul_tn(trace.s, &d_sh1)?;
    let d_pre1 = d_h1.zip_map(&trace.pre1, |g, p| if p > 0.0 { g } else { 0.0 });
    let d_xw1 = matmul_tn(trace.s, &d_pre1)?;
    let w1 = matmul_tn(trace.x, &d_xw1)?;

    let d_s = if want_ds {
        let mut ds = matmul_nt(&d_sh1, &trace.h1)?;
        ds.axpy(1.0, &matmul_nt(&d_pre1, &trace.xw1)?);
        Some(ds)
    } else {
        None
    };
    Ok((GcnParams { w1, w2, head }, d_s))
}
