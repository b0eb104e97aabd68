use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, Parameters};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};

/// Two-layer MLP that maps features to the GCN embedding space without
/// looking at structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl EncoderParams {
    pub fn init(d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: glorot(d, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(hidden, hidden, rng),
            b2: Matrix::zeros(1, hidden),
        }
    }

    pub fn embedding_width(&self) -> usize {
        self.w2.cols()
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Debug)]
pub struct EncoderTrace<'a> {
    x: &'a Matrix,
    pre1: Matrix,
    r1: Matrix,
    pub h: Matrix,
}

/// `h = relu(x·W1 + b1)·W2 + b2`
pub fn feature_encoder_forward<'a>(x: &'a Matrix, phi: &EncoderParams) -> Result<EncoderTrace<'a>> {
    if x.cols() != phi.w1.rows() {
        return Err(Error::shape("feature_encoder_forward", format!("{} features vs {}", x.cols(), phi.w1.rows())));
    }
    let pre1 = matmul(x, &phi.w1)?.add_row_broadcast(&phi.b1)?;
    let r1 = pre1.map(|v| v.max(0.0));
    let h = matmul(&r1, &phi.w2)?.add_row_broadcast(&phi.b2)?;
    Ok(EncoderTrace { x, pre1, r1, h })
}

pub fn feature_encoder_backward(trace: &EncoderTrace<'_>, phi: &EncoderParams, d_h: &Matrix) -> Result<EncoderParams> {
    if !d_h.same_shape(&trace.h) {
        return Err(Error::shape("feature_encoder_backward", format!("d_h {:?}", d_h.shape())));
    }
    let w2 = matmul_tn(&trace.r1, d_h)?;
    let b2 = d_h.col_sums();
    let d_r1 = matmul_nt(d_h, &phi.w2)?;
    let d_pre1 = d_r1.zip_map(&trace.pre1, |g, p| if p > 0.0 { g } else { 0.0 });
    let w1 = matmul_tn(trace.x, &d_pre1)?;
    let b1 = d_pre1.col_sums();
    Ok(EncoderParams { w1, b1, w2, b2 })
}
