//! Central finite differences, used as the independent oracle for every
//! hand-derived gradient in the crate.

use serde::Serialize;

use crate::error::{Error, Result};

/// Floor on the denominator of the relative error, so that coordinates whose
/// true gradient is ~0 are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub num_params_checked: usize,
    pub failing_indices: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing_indices.is_empty()
    }
}

/// `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps)` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite difference step must be > 0, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation { index: i });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut max_rel_error: f64 = 0.0;
    let mut failing_indices = Vec::new();
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        max_rel_error = max_rel_error.max(e);
        if !(e < tol) {
            failing_indices.push(i);
        }
    }
    GradCheckReport { max_rel_error, num_params_checked: analytic.len(), failing_indices }
}
