use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, Parameters};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, row_softmax, Matrix};

/// Affine classifier shared by node embeddings from either model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Matrix,
    pub b: Matrix,
}

impl Head {
    pub fn init(hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { w: glorot(hidden, classes, rng), b: Matrix::zeros(1, classes) }
    }

    pub fn logits(&self, e: &Matrix) -> Result<Matrix> {
        if e.cols() != self.w.rows() {
            return Err(Error::shape("classifier_head", format!("embedding width {} vs {}", e.cols(), self.w.rows())));
        }
        matmul(e, &self.w)?.add_row_broadcast(&self.b)
    }
}

impl Parameters for Head {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b]
    }
}

/// `row_softmax(e·W + b)`
pub fn classifier_head(e: &Matrix, head: &Head) -> Result<Matrix> {
    Ok(row_softmax(&head.logits(e)?))
}

/// Returns `(dHead, dE)` for upstream `d_logits`.
pub fn head_backward(e: &Matrix, head: &Head, d_logits: &Matrix) -> Result<(Head, Matrix)> {
    let grads = Head { w: matmul_tn(e, d_logits)?, b: d_logits.col_sums() };
    let d_e = matmul_nt(d_logits, &head.w)?;
    Ok((grads, d_e))
}
