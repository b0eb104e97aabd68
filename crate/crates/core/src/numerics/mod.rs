//! Dense `f64` kernels and gradient-check utilities.

mod gradcheck;
mod matrix;

pub use gradcheck::{compare_gradients, finite_diff_grad, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use matrix::{
    apply_activation, cosine_sim_backward, cosine_sim_matrix, matmul, matmul_nt, matmul_tn, row_log_softmax,
    row_softmax, Activation, Matrix,
};
