//! Client-side state and local training for every method.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::aggregate::{compute_prototypes, prototype_penalty, PrototypeSet};
use super::optim::Optimizer;
use super::{ClientData, ClientMetrics, GlobalState, Method, Model, Payload, Upload};
use crate::config::FederationConfig;
use crate::error::{Error, Result};
use crate::graph::{knn_graph, normalize_adjacency, Graph, Metric};
use crate::losses::{classification_objective, cross_entropy_loss, distillation_objective, structure_objective, LossOutput};
use crate::models::{
    adjacency_process, feature_encoder_backward, feature_encoder_forward, gcn_backward, gcn_forward, graph_generator_forward,
    head_backward, EncoderParams, GcnParams, LearnerConfig, LearnerParams, MlpParams,
};
use crate::numerics::Matrix;

/// The graph learner of a graphless FedGLS client. Never leaves the client.
#[derive(Debug, Clone)]
struct GraphLearner {
    omega: LearnerParams,
    cfg: LearnerConfig,
    opt: Optimizer,
}

impl GraphLearner {
    fn generate(&self, x: &Matrix) -> Result<Matrix> {
        let gen = graph_generator_forward(x, &self.omega, self.cfg.activation)?;
        Ok(adjacency_process(&gen.s_tilde, &self.cfg)?.s)
    }
}

/// A personalized model that persists across rounds.
#[derive(Debug, Clone)]
struct LocalModel {
    model: Model,
    opt: Optimizer,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub graphless: bool,
    graph: Graph,
    /// Adjacency fed to the GCN; `None` for clients that train an MLP.
    s: Option<Matrix>,
    learner: Option<GraphLearner>,
    local: Option<LocalModel>,
    seed: u64,
}

impl ClientState {
    pub(super) fn new(
        id: usize,
        data: ClientData,
        method: Method,
        cfg: &FederationConfig,
        theta: &GcnParams,
        mlp: &MlpParams,
        seed: u64,
    ) -> Result<Self> {
        let ClientData { graph, graphless } = data;
        let graph = if graphless && method != Method::FedGnn { graph.without_edges() } else { graph };
        let n = graph.num_nodes();
        let mut learner = None;
        let s = match method {
            Method::FedGls if graphless => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let l = GraphLearner {
                    omega: LearnerParams::init_perturbed(cfg.learner, graph.feature_dim(), cfg.learner_layers, &mut rng),
                    cfg: LearnerConfig { k: cfg.k.min(n), activation: cfg.learner_activation, ..LearnerConfig::default() },
                    opt: Optimizer::new(cfg.optimizer, cfg.lr_learner),
                };
                let s = l.generate(&graph.x)?;
                learner = Some(l);
                Some(s)
            }
            Method::FedMlp => None,
            Method::FedGnnMlp | Method::FedProto if graphless => None,
            Method::LocalGnnK | Method::FedGnnK if graphless => {
                if n < 2 {
                    return Err(Error::Data(format!("client {id} has {n} nodes, too few for a kNN graph")));
                }
                let edges = knn_graph(&graph.x, cfg.k.min(n - 1), Metric::Cosine)?;
                Some(normalize_adjacency(&graph.with_edges(edges)?, true))
            }
            _ => Some(normalize_adjacency(&graph, true)),
        };
        let local = match method {
            Method::LocalGnnK | Method::FedProto => {
                let model = if s.is_some() { Model::Gcn(theta.clone()) } else { Model::Mlp(mlp.clone()) };
                Some(LocalModel { model, opt: Optimizer::new(cfg.optimizer, cfg.lr_gnn) })
            }
            _ => None,
        };
        Ok(Self { id, graphless, graph, s, learner, local, seed })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The adjacency this client currently trains on, if any.
    pub fn adjacency(&self) -> Option<&Matrix> {
        self.s.as_ref()
    }

    pub fn has_graph_learner(&self) -> bool {
        self.learner.is_some()
    }

    fn upload(&self, payload: Payload) -> Upload {
        Upload { client: self.id, weight: self.num_nodes() as f64, payload }
    }

    pub(super) fn local_round(&mut self, method: Method, global: &GlobalState, cfg: &FederationConfig) -> Result<Option<Upload>> {
        match global {
            GlobalState::Gls { theta, phi } => self.fedgls_round(theta, phi, cfg).map(Some),
            GlobalState::Shared(model) => {
                let model = self.train_copy(model.clone(), cfg)?;
                Ok(Some(self.upload(Payload::Model(model))))
            }
            GlobalState::Grouped { gnn, mlp } => {
                let start = if self.s.is_some() { Model::Gcn(gnn.clone()) } else { Model::Mlp(mlp.clone()) };
                let model = self.train_copy(start, cfg)?;
                Ok(Some(self.upload(Payload::Model(model))))
            }
            GlobalState::Prototypes(protos) => self.fedproto_round(protos, cfg).map(Some),
            GlobalState::Local => {
                debug_assert_eq!(method, Method::LocalGnnK);
                self.personal_round(None, cfg)?;
                Ok(None)
            }
        }
    }

    fn fedgls_round(&mut self, theta: &GcnParams, phi: &EncoderParams, cfg: &FederationConfig) -> Result<Upload> {
        let x = &self.graph.x;
        let mut theta = theta.clone();
        let mut phi = phi.clone();
        let mut opt_theta = Optimizer::new(cfg.optimizer, cfg.lr_gnn);
        let mut opt_phi = Optimizer::new(cfg.optimizer, cfg.lr_encoder);

        if let Some(learner) = &mut self.learner {
            let h = feature_encoder_forward(x, &phi)?.h;
            let out = structure_objective(x, &learner.omega, &learner.cfg, &theta, &h, cfg.tau)?;
            learner.opt.step(&mut learner.omega, &out.grads);
            self.s = Some(learner.generate(x)?);
        }
        let s = self.s.as_ref().expect("fedgls clients always hold an adjacency");
        let train = &self.graph.masks.train;
        for _ in 0..cfg.local_epochs {
            let ce = classification_objective(x, s, &theta, &self.graph.labels, train)?;
            opt_theta.step(&mut theta, &ce.grads);
            let z = gcn_forward(x, s, &theta)?.z;
            let kd = distillation_objective(x, &z, &phi, &theta.head)?;
            opt_phi.step(&mut phi, &kd.grads);
        }
        Ok(self.upload(Payload::Gls { theta, phi }))
    }

    /// E epochs of supervised training on a fresh copy of the global model.
    fn train_copy(&self, mut model: Model, cfg: &FederationConfig) -> Result<Model> {
        let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_gnn);
        for _ in 0..cfg.local_epochs {
            let out = supervised_objective(&model, &self.graph, self.s.as_ref(), None)?;
            opt.step(&mut model, &out.grads);
        }
        Ok(model)
    }

    /// E epochs on the persistent local model, optionally pulled toward
    /// global prototypes.
    fn personal_round(&mut self, protos: Option<(&PrototypeSet, f64)>, cfg: &FederationConfig) -> Result<()> {
        let local = self.local.as_mut().expect("personalized methods keep a local model");
        for _ in 0..cfg.local_epochs {
            let out = supervised_objective(&local.model, &self.graph, self.s.as_ref(), protos)?;
            local.opt.step(&mut local.model, &out.grads);
        }
        Ok(())
    }

    fn fedproto_round(&mut self, global: &PrototypeSet, cfg: &FederationConfig) -> Result<Upload> {
        self.personal_round(Some((global, cfg.fedproto_lambda)), cfg)?;
        let local = self.local.as_ref().expect("fedproto keeps a local model");
        let (emb, _) = forward(&local.model, &self.graph.x, self.s.as_ref())?;
        let protos = compute_prototypes(&emb, &self.graph.labels, &self.graph.masks.train);
        Ok(self.upload(Payload::Prototypes(protos)))
    }

    pub(super) fn evaluate(&self, global: &GlobalState) -> Result<ClientMetrics> {
        let logits = match (global, &self.local) {
            (_, Some(local)) => forward(&local.model, &self.graph.x, self.s.as_ref())?.1,
            (GlobalState::Gls { theta, .. }, None) => {
                let s = self.s.as_ref().expect("fedgls clients always hold an adjacency");
                gcn_forward(&self.graph.x, s, theta)?.logits
            }
            (GlobalState::Shared(model), None) => forward(model, &self.graph.x, self.s.as_ref())?.1,
            (GlobalState::Grouped { gnn, mlp }, None) => match &self.s {
                Some(s) => gcn_forward(&self.graph.x, s, gnn)?.logits,
                None => forward(&Model::Mlp(mlp.clone()), &self.graph.x, None)?.1,
            },
            (GlobalState::Prototypes(_) | GlobalState::Local, None) => {
                return Err(Error::Parameter(format!("client {} has no model to evaluate", self.id)))
            }
        };
        let g = &self.graph;
        let train_loss = if g.masks.train.is_empty() { 0.0 } else { cross_entropy_loss(&logits, &g.labels, &g.masks.train)?.0 };
        Ok(ClientMetrics {
            client: self.id,
            graphless: self.graphless,
            n: g.num_nodes(),
            train_loss,
            val_acc: accuracy(&logits, &g.labels, &g.masks.val),
            test_acc: accuracy(&logits, &g.labels, &g.masks.test),
        })
    }
}

/// `(embeddings, logits)` of either model.
fn forward(model: &Model, x: &Matrix, s: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
    match model {
        Model::Gcn(theta) => {
            let s = s.ok_or_else(|| Error::Parameter("GCN evaluated without an adjacency".into()))?;
            let t = gcn_forward(x, s, theta)?;
            Ok((t.z, t.logits))
        }
        Model::Mlp(p) => {
            let h = feature_encoder_forward(x, &p.encoder)?.h;
            let logits = p.head.logits(&h)?;
            Ok((h, logits))
        }
    }
}

/// Cross-entropy on the train mask, plus the prototype penalty on the
/// embeddings when `protos` is given.
pub fn supervised_objective(
    model: &Model,
    graph: &Graph,
    s: Option<&Matrix>,
    protos: Option<(&PrototypeSet, f64)>,
) -> Result<LossOutput<Model>> {
    let (x, labels, train) = (&graph.x, &graph.labels, &graph.masks.train);
    let penalty = |emb: &Matrix| protos.map(|(g, lambda)| prototype_penalty(emb, labels, train, g, lambda));
    match model {
        Model::Gcn(theta) => {
            let s = s.ok_or_else(|| Error::Parameter("GCN trained without an adjacency".into()))?;
            let trace = gcn_forward(x, s, theta)?;
            let (ce, d_logits) = cross_entropy_loss(&trace.logits, labels, train)?;
            let reg = penalty(&trace.z);
            let (grads, _) = gcn_backward(&trace, theta, reg.as_ref().map(|r| &r.1), Some(&d_logits), false)?;
            Ok(LossOutput { value: ce + reg.map_or(0.0, |r| r.0), grads: Model::Gcn(grads) })
        }
        Model::Mlp(p) => {
            let enc = feature_encoder_forward(x, &p.encoder)?;
            let logits = p.head.logits(&enc.h)?;
            let (ce, d_logits) = cross_entropy_loss(&logits, labels, train)?;
            let (head, mut d_h) = head_backward(&enc.h, &p.head, &d_logits)?;
            let reg = penalty(&enc.h);
            if let Some((_, d_reg)) = &reg {
                d_h.axpy(1.0, d_reg);
            }
            let encoder = feature_encoder_backward(&enc, &p.encoder, &d_h)?;
            Ok(LossOutput { value: ce + reg.map_or(0.0, |r| r.0), grads: Model::Mlp(MlpParams { encoder, head }) })
        }
    }
}

/// Fraction of `mask` whose argmax prediction (ties to the lower class)
/// matches the label. Zero for an empty mask.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let correct = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let pred = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            pred == labels[i]
        })
        .count();
    correct as f64 / mask.len() as f64
}
