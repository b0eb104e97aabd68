//! First-order optimizers over any [`Parameters`] bundle.

use crate::config::OptimizerKind;
use crate::models::Parameters;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Plain gradient descent or Adam. Moment buffers are allocated on the first
/// step from the parameter shapes.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let gs = grads.tensors();
        let mut ps = params.tensors_mut();
        assert_eq!(ps.len(), gs.len(), "parameter/gradient tensor count");
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in ps.iter_mut().zip(&gs) {
                    p.axpy(-self.lr, g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = gs.iter().map(|g| vec![0.0; g.as_slice().len()]).collect();
                    self.v = self.m.clone();
                }
                let bc1 = 1.0 - BETA1.powi(self.t);
                let bc2 = 1.0 - BETA2.powi(self.t);
                for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
                    for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                        *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                        *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                        *pv -= self.lr * (*mv / bc1) / ((*vv / bc2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}
