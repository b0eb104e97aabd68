//! The trainable pieces: a two-layer GCN with a linear softmax head, a
//! structure-free MLP feature encoder, and the graph learner (generator plus
//! the non-parametric adjacency processor).
//!
//! Every model is a pair of free functions: `*_forward` returns a trace that
//! borrows its inputs, and `*_backward` consumes that trace together with
//! upstream gradients. Parameter gradients use the same struct as the
//! parameters themselves.

mod encoder;
mod gcn;
mod head;
mod learner;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

pub use encoder::{feature_encoder_backward, feature_encoder_forward, EncoderParams, EncoderTrace};
pub use gcn::{gcn_backward, gcn_forward, GcnParams, GcnTrace};
pub use head::{classifier_head, head_backward, Head};
pub use learner::{
    adjacency_process, adjacency_process_backward, graph_generator_backward, graph_generator_forward, normalize_backward,
    normalize_degrees, sparsify_top_k, symmetrize, symmetrize_backward, AdjacencyTrace, GeneratorTrace, LearnerConfig,
    LearnerParams, LearnerVariant,
};

/// Hidden width of every layer in the GCN and the feature encoder.
pub const HIDDEN: usize = 16;

/// A bundle of parameter tensors that can be averaged, stepped and flattened.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.as_slice().iter().copied()).collect()
    }

    fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.as_slice().len();
            t.as_mut_slice().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }
}

/// Two-layer MLP classifier (encoder + head) used by the structure-free baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub encoder: EncoderParams,
    pub head: Head,
}

impl MlpParams {
    pub fn init(d: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { encoder: EncoderParams::init(d, hidden, rng), head: Head::init(hidden, classes, rng) }
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// Glorot-uniform initialization.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}
