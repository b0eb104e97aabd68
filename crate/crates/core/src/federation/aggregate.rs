//! Server-side aggregation: FedAvg over parameter bundles and support-weighted
//! averaging of class prototypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Parameters;
use crate::numerics::Matrix;

/// Coordinate-wise weighted mean with weights `wₖ / Σw`.
///
/// Computed as `p₀ + Σₖ (wₖ/Σw)(pₖ − p₀)`, which equals the weighted mean and
/// returns identical inputs bit-for-bit.
pub fn fedavg_aggregate<P: Parameters>(params: &[P], weights: &[f64]) -> Result<P> {
    let Some(first) = params.first() else {
        return Err(Error::Parameter("fedavg over an empty client set".into()));
    };
    if params.len() != weights.len() {
        return Err(Error::Parameter(format!("{} parameter sets but {} weights", params.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Parameter(format!("aggregation weight must be > 0, got {w}")));
    }
    let shapes = first.shapes();
    if let Some(k) = params.iter().position(|p| p.shapes() != shapes) {
        return Err(Error::shape("fedavg_aggregate", format!("client {k} parameter shapes differ")));
    }
    let total: f64 = weights.iter().sum();
    let mut out = first.clone();
    for (p, &w) in params.iter().zip(weights).skip(1) {
        let frac = w / total;
        for ((o, t), base) in out.tensors_mut().into_iter().zip(p.tensors()).zip(first.tensors()) {
            for ((ov, &tv), &bv) in o.as_mut_slice().iter_mut().zip(t.as_slice()).zip(base.as_slice()) {
                *ov += frac * (tv - bv);
            }
        }
    }
    Ok(out)
}

/// Class-wise mean embedding and the number of nodes it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub mean: Vec<f64>,
    pub support: usize,
}

/// Prototypes keyed by class id. Classes without support are absent.
pub type PrototypeSet = BTreeMap<usize, Prototype>;

pub fn compute_prototypes(embeddings: &Matrix, labels: &[usize], mask: &[usize]) -> PrototypeSet {
    let mut out = PrototypeSet::new();
    for &i in mask {
        let p = out
            .entry(labels[i])
            .or_insert_with(|| Prototype { mean: vec![0.0; embeddings.cols()], support: 0 });
        p.support += 1;
        for (m, &e) in p.mean.iter_mut().zip(embeddings.row(i)) {
            *m += e;
        }
    }
    for p in out.values_mut() {
        let s = p.support as f64;
        p.mean.iter_mut().for_each(|m| *m /= s);
    }
    out
}

/// Support-weighted mean over the clients that hold each class.
pub fn aggregate_prototypes(sets: &[PrototypeSet]) -> PrototypeSet {
    let mut out = PrototypeSet::new();
    for set in sets {
        for (&c, p) in set {
            let g = out.entry(c).or_insert_with(|| Prototype { mean: vec![0.0; p.mean.len()], support: 0 });
            g.support += p.support;
            for (gm, &pm) in g.mean.iter_mut().zip(&p.mean) {
                *gm += p.support as f64 * pm;
            }
        }
    }
    for g in out.values_mut() {
        let s = g.support as f64;
        g.mean.iter_mut().for_each(|m| *m /= s);
    }
    out
}

/// `λ Σ_c ‖P_c − G_c‖²` over classes present both locally (train mask) and
/// globally, with its gradient on the embeddings.
pub fn prototype_penalty(
    embeddings: &Matrix,
    labels: &[usize],
    mask: &[usize],
    global: &PrototypeSet,
    lambda: f64,
) -> (f64, Matrix) {
    let local = compute_prototypes(embeddings, labels, mask);
    let mut grad = Matrix::zeros(embeddings.rows(), embeddings.cols());
    let mut value = 0.0;
    let mut diffs = BTreeMap::new();
    for (c, p) in &local {
        if let Some(g) = global.get(c) {
            let diff: Vec<f64> = p.mean.iter().zip(&g.mean).map(|(a, b)| a - b).collect();
            value += lambda * diff.iter().map(|d| d * d).sum::<f64>();
            diffs.insert(*c, (diff, p.support as f64));
        }
    }
    for &i in mask {
        if let Some((diff, support)) = diffs.get(&labels[i]) {
            for (gv, d) in grad.row_mut(i).iter_mut().zip(diff) {
                *gv += 2.0 * lambda * d / support;
            }
        }
    }
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Head;

    fn scalar(v: f64) -> Head {
        Head { w: Matrix::filled(1, 1, v), b: Matrix::filled(1, 1, -v) }
    }

    #[test]
    fn weighted_mean_example() {
        let out = fedavg_aggregate(&[scalar(1.0), scalar(3.0)], &[1.0, 3.0]).unwrap();
        assert_eq!(out.w[(0, 0)], 2.5);
        assert_eq!(out.b[(0, 0)], -2.5);
    }

    #[test]
    fn identical_inputs_are_unchanged() {
        let p = scalar(0.1 + 0.2);
        let out = fedavg_aggregate(&[p.clone(), p.clone(), p.clone()], &[7.0, 3.0, 11.0]).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(fedavg_aggregate::<Head>(&[], &[]), Err(Error::Parameter(_))));
        assert!(fedavg_aggregate(&[scalar(1.0)], &[0.0]).is_err());
        let wide = Head { w: Matrix::zeros(1, 2), b: Matrix::zeros(1, 2) };
        assert!(matches!(fedavg_aggregate(&[scalar(1.0), wide], &[1.0, 1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn prototypes_single_node_per_class() {
        let e = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]);
        let p = compute_prototypes(&e, &[0, 1, 1], &[0, 1]);
        assert_eq!(p[&0].mean, vec![1.0, 2.0]);
        assert_eq!(p[&1].mean, vec![3.0, 4.0]);
        assert_eq!(p[&1].support, 1);
    }

    #[test]
    fn prototype_aggregation_is_support_weighted() {
        let a = PrototypeSet::from([(0, Prototype { mean: vec![1.0], support: 2 })]);
        let b = PrototypeSet::from([(0, Prototype { mean: vec![4.0], support: 1 })]);
        let g = aggregate_prototypes(&[a, b]);
        assert_eq!(g[&0].mean, vec![2.0]);
        assert_eq!(g[&0].support, 3);
        assert!(!g.contains_key(&1));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        use crate::numerics::{compare_gradients, finite_diff_grad};
        let e = Matrix::from_rows(&[[0.3, -1.0], [0.5, 0.2], [-0.7, 0.9], [1.1, 0.4]]);
        let labels = [0, 1, 0, 2];
        let mask = [0, 1, 2];
        let global = PrototypeSet::from([
            (0, Prototype { mean: vec![0.1, 0.1], support: 4 }),
            (2, Prototype { mean: vec![5.0, 5.0], support: 1 }),
        ]);
        let (_, g) = prototype_penalty(&e, &labels, &mask, &global, 0.7);
        let numeric = finite_diff_grad(
            |v| prototype_penalty(&Matrix::from_vec(4, 2, v.to_vec()).unwrap(), &labels, &mask, &global, 0.7).0,
            e.as_slice(),
            1e-6,
        )
        .unwrap();
        assert!(compare_gradients(g.as_slice(), &numeric, 1e-6).passed());
    }
}
