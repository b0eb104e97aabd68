//! Training objectives. The primitive losses return gradients on their
//! matrix inputs; the `*_objective` functions chain those through the models
//! to exactly one parameter group each:
//!
//! * structure learning updates only the graph learner (encoder output detached),
//! * classification updates only the GCN and its head,
//! * distillation updates only the feature encoder (teacher and head detached).

use crate::error::{Error, Result};
use crate::models::{
    adjacency_process, adjacency_process_backward, feature_encoder_backward, feature_encoder_forward, gcn_backward,
    gcn_forward, graph_generator_backward, graph_generator_forward, EncoderParams, GcnParams, Head, LearnerConfig,
    LearnerParams,
};
use crate::numerics::{cosine_sim_backward, cosine_sim_matrix, matmul_nt, row_log_softmax, row_softmax, Matrix};

/// Loss value plus the gradient for a single parameter group `P`.
#[derive(Debug, Clone)]
pub struct LossOutput<P> {
    pub value: f64,
    pub grads: P,
}

/// Contrastive loss between GCN embeddings `z` and encoder embeddings `h`.
///
/// For node `i` the positive pair is `(zᵢ, hᵢ)`; negatives are `(zᵢ, hⱼ)` and
/// `(zᵢ, zⱼ)` for every `j ≠ i`. The denominator sums over negatives only, so
/// the loss can be negative. Mean over nodes. Returns `(value, dL/dz)`; `h`
/// receives no gradient.
pub fn contrastive_loss(z: &Matrix, h: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let n = z.rows();
    if !z.same_shape(h) {
        return Err(Error::shape("contrastive_loss", format!("z {:?} vs h {:?}", z.shape(), h.shape())));
    }
    if n < 2 {
        return Err(Error::Parameter("contrastive loss needs at least 2 nodes".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    let cross = cosine_sim_matrix(z, h)?.scale(1.0 / tau);
    let own = cosine_sim_matrix(z, z)?.scale(1.0 / tau);

    let mut value = 0.0;
    let mut d_cross = Matrix::zeros(n, n);
    let mut d_own = Matrix::zeros(n, n);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let shift = (0..n)
            .filter(|&j| j != i)
            .map(|j| cross[(i, j)].max(own[(i, j)]))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            denom += (cross[(i, j)] - shift).exp() + (own[(i, j)] - shift).exp();
        }
        value += -cross[(i, i)] + shift + denom.ln();
        d_cross[(i, i)] -= inv_n;
        for j in (0..n).filter(|&j| j != i) {
            d_cross[(i, j)] += inv_n * (cross[(i, j)] - shift).exp() / denom;
            d_own[(i, j)] += inv_n * (own[(i, j)] - shift).exp() / denom;
        }
    }
    value *= inv_n;

    let (dz_cross, _) = cosine_sim_backward(z, h, &d_cross.scale(1.0 / tau))?;
    let (dz_a, dz_b) = cosine_sim_backward(z, z, &d_own.scale(1.0 / tau))?;
    let mut dz = dz_cross;
    dz.axpy(1.0, &dz_a);
    dz.axpy(1.0, &dz_b);
    Ok((value, dz))
}

/// Mean cross-entropy over the nodes in `mask`. Returns `(value, dL/dlogits)`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<(f64, Matrix)> {
    if mask.is_empty() {
        return Err(Error::Parameter("cross entropy over an empty mask".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::shape("cross_entropy_loss", format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let p = logits.cols();
    if let Some(&bad) = mask.iter().find(|&&i| labels[i] >= p) {
        return Err(Error::Data(format!("label {} of node {bad} outside {p} classes", labels[bad])));
    }
    let log_probs = row_log_softmax(logits);
    let probs = row_softmax(logits);
    let scale = 1.0 / mask.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), p);
    for &i in mask {
        value -= log_probs[(i, labels[i])];
        for c in 0..p {
            grad[(i, c)] = scale * probs[(i, c)];
        }
        grad[(i, labels[i])] -= scale;
    }
    Ok((value * scale, grad))
}

/// `Σᵢ KL(softmax(head(zᵢ)) ‖ softmax(head(hᵢ)))`, summed over nodes.
/// Returns `(value, dL/dh)`; the teacher `z` and the head are constants.
pub fn kd_loss(z: &Matrix, h: &Matrix, head: &Head) -> Result<(f64, Matrix)> {
    if !z.same_shape(h) {
        return Err(Error::shape("kd_loss", format!("z {:?} vs h {:?}", z.shape(), h.shape())));
    }
    let teacher_logits = head.logits(z)?;
    let student_logits = head.logits(h)?;
    let log_p = row_log_softmax(&teacher_logits);
    let log_q = row_log_softmax(&student_logits);
    let p = log_p.map(f64::exp);
    let q = log_q.map(f64::exp);
    let mut value = 0.0;
    for ((&pv, &lp), &lq) in p.as_slice().iter().zip(log_p.as_slice()).zip(log_q.as_slice()) {
        value += pv * (lp - lq);
    }
    let d_logits = q.sub(&p)?;
    let d_h = matmul_nt(&d_logits, &head.w)?;
    Ok((value, d_h))
}

/// Contrastive objective for the graph learner: regenerates the adjacency
/// from `omega`, runs the GCN with fixed `theta`, and contrasts against the
/// fixed encoder output `h`.
pub fn structure_objective(
    x: &Matrix,
    omega: &LearnerParams,
    cfg: &LearnerConfig,
    theta: &GcnParams,
    h: &Matrix,
    tau: f64,
) -> Result<LossOutput<LearnerParams>> {
    let gen = graph_generator_forward(x, omega, cfg.activation)?;
    let adj = adjacency_process(&gen.s_tilde, cfg)?;
    let gcn = gcn_forward(x, &adj.s, theta)?;
    let (value, d_z) = contrastive_loss(&gcn.z, h, tau)?;
    let (_, d_s) = gcn_backward(&gcn, theta, Some(&d_z), None, true)?;
    let d_s_tilde = adjacency_process_backward(&adj, cfg, &d_s.expect("requested"));
    let grads = graph_generator_backward(&gen, omega, &d_s_tilde)?;
    Ok(LossOutput { value, grads })
}

/// Supervised objective for the GCN on adjacency `s`.
pub fn classification_objective(
    x: &Matrix,
    s: &Matrix,
    theta: &GcnParams,
    labels: &[usize],
    train: &[usize],
) -> Result<LossOutput<GcnParams>> {
    let gcn = gcn_forward(x, s, theta)?;
    let (value, d_logits) = cross_entropy_loss(&gcn.logits, labels, train)?;
    let (grads, _) = gcn_backward(&gcn, theta, None, Some(&d_logits), false)?;
    Ok(LossOutput { value, grads })
}

/// Distillation objective for the feature encoder against teacher embeddings `z`.
pub fn distillation_objective(x: &Matrix, z: &Matrix, phi: &EncoderParams, head: &Head) -> Result<LossOutput<EncoderParams>> {
    let enc = feature_encoder_forward(x, phi)?;
    let (value, d_h) = kd_loss(z, &enc.h, head)?;
    let grads = feature_encoder_backward(&enc, phi, &d_h)?;
    Ok(LossOutput { value, grads })
}
