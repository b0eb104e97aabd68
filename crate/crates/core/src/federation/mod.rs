//! Round-by-round federated training for FedGLS and the six comparison
//! methods.
//!
//! Clients own their graphs and everything derived from them. The server only
//! ever sees [`Upload`]s, whose payloads are model parameters or class
//! prototypes; the graph learner parameters have no representation there.

mod aggregate;
mod client;
mod optim;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FederationConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{EncoderParams, GcnParams, MlpParams, Parameters};
use crate::numerics::Matrix;
use crate::seed::mix;

pub use aggregate::{aggregate_prototypes, compute_prototypes, fedavg_aggregate, prototype_penalty, Prototype, PrototypeSet};
pub use client::{accuracy, supervised_objective, ClientState};
pub use optim::Optimizer;

const INIT_STREAM: u64 = 0x1417;
const SAMPLE_STREAM: u64 = 0x5a3e;
const GRAPHLESS_STREAM: u64 = 0x91e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum Method {
    FedGls,
    FedMlp,
    FedGnnMlp,
    FedProto,
    LocalGnnK,
    FedGnnK,
    FedGnn,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::FedGls,
        Method::FedMlp,
        Method::FedGnnMlp,
        Method::FedProto,
        Method::LocalGnnK,
        Method::FedGnnK,
        Method::FedGnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedGls => "fedgls",
            Method::FedMlp => "fed-mlp",
            Method::FedGnnMlp => "fed-gnnmlp",
            Method::FedProto => "fedproto",
            Method::LocalGnnK => "local-gnnk",
            Method::FedGnnK => "fed-gnnk",
            Method::FedGnn => "fed-gnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

impl From<Method> for &'static str {
    fn from(m: Method) -> Self {
        m.name()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A node classifier: GCN (needs an adjacency) or structure-free MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Gcn(GcnParams),
    Mlp(MlpParams),
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<&Matrix> {
        match self {
            Model::Gcn(p) => p.tensors(),
            Model::Mlp(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Model::Gcn(p) => p.tensors_mut(),
            Model::Mlp(p) => p.tensors_mut(),
        }
    }
}

/// What a client sends to the server at the end of a round.
#[derive(Debug, Clone, Serialize)]
pub struct Upload {
    pub client: usize,
    /// Local node count, the FedAvg weight.
    pub weight: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Serialize)]
pub enum Payload {
    Gls { theta: GcnParams, phi: EncoderParams },
    Model(Model),
    Prototypes(PrototypeSet),
}

/// Server-side state, one shape per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GlobalState {
    Gls { theta: GcnParams, phi: EncoderParams },
    Shared(Model),
    Grouped { gnn: GcnParams, mlp: MlpParams },
    Prototypes(PrototypeSet),
    Local,
}

/// One client's data before federation starts.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub graph: Graph,
    pub graphless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: usize,
    pub graphless: bool,
    pub n: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub method: Method,
    pub repeat: usize,
    pub seed: u64,
    pub round: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub clients: Vec<ClientMetrics>,
    /// Excluded from the replayable metrics stream.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RoundMetrics {
    fn from_clients(method: Method, seed: u64, round: usize, clients: Vec<ClientMetrics>) -> Self {
        let weights: Vec<f64> = clients.iter().map(|c| c.n as f64).collect();
        let pick = |f: fn(&ClientMetrics) -> f64| weighted_mean(&clients.iter().map(f).collect::<Vec<_>>(), &weights);
        RoundMetrics {
            method,
            repeat: 0,
            seed,
            round,
            train_loss: pick(|c| c.train_loss),
            val_acc: pick(|c| c.val_acc),
            test_acc: pick(|c| c.test_acc),
            clients,
            wall_time_s: 0.0,
        }
    }
}

/// `Σ wᵢ vᵢ / Σ wᵢ`; zero when there is no weight.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Marks `round(ratio · K)` clients as graphless, chosen by a seeded shuffle.
pub fn select_graphless(num_clients: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let count = ((ratio * num_clients as f64).round() as usize).min(num_clients);
    let mut ids: Vec<usize> = (0..num_clients).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, &[GRAPHLESS_STREAM])));
    let mut flags = vec![false; num_clients];
    for &i in &ids[..count] {
        flags[i] = true;
    }
    flags
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub rounds: Vec<RoundMetrics>,
    pub global: GlobalState,
}

/// A running federation: clients, server state and round counter.
pub struct Federation {
    method: Method,
    cfg: FederationConfig,
    seed: u64,
    round: usize,
    clients: Vec<ClientState>,
    global: GlobalState,
}

impl Federation {
    pub fn new(method: Method, cfg: &FederationConfig, data: Vec<ClientData>, seed: u64) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::Config("federation needs at least one client".into()));
        };
        let d = first.graph.feature_dim();
        if let Some(k) = data.iter().position(|c| c.graph.feature_dim() != d) {
            return Err(Error::Data(format!("client {k} has {} features, client 0 has {d}", data[k].graph.feature_dim())));
        }
        if method == Method::FedGls && !(data.iter().any(|c| c.graphless) && data.iter().any(|c| !c.graphless)) {
            return Err(Error::Config("fedgls needs at least one graphless and one graph-holding client".into()));
        }
        if method == Method::FedGnn {
            if let Some(c) = data.iter().position(|c| c.graphless && c.graph.edges.is_empty()) {
                return Err(Error::Data(format!("fed-gnn needs real edges, but graphless client {c} has none")));
            }
        }
        let classes = data.iter().map(|c| c.graph.num_classes()).max().unwrap_or(0);
        if classes == 0 {
            return Err(Error::Data("no labelled nodes".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[INIT_STREAM]));
        let theta = GcnParams::init(d, cfg.hidden, classes, &mut rng);
        let phi = EncoderParams::init(d, cfg.hidden, &mut rng);
        let mlp = MlpParams::init(d, cfg.hidden, classes, &mut rng);

        let clients = data
            .into_iter()
            .enumerate()
            .map(|(id, c)| ClientState::new(id, c, method, cfg, &theta, &mlp, mix(seed, &[id as u64])))
            .collect::<Result<Vec<_>>>()?;

        let global = match method {
            Method::FedGls => GlobalState::Gls { theta, phi },
            Method::FedMlp => GlobalState::Shared(Model::Mlp(mlp)),
            Method::FedGnnK | Method::FedGnn => GlobalState::Shared(Model::Gcn(theta)),
            Method::FedGnnMlp => GlobalState::Grouped { gnn: theta, mlp },
            Method::FedProto => GlobalState::Prototypes(PrototypeSet::new()),
            Method::LocalGnnK => GlobalState::Local,
        };
        Ok(Self { method, cfg: cfg.clone(), seed, round: 0, clients, global })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global(&self) -> &GlobalState {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Ids of the clients taking part in `round`, in increasing order.
    pub fn sample_clients(&self, round: usize) -> Vec<usize> {
        let k = self.clients.len();
        let count = ((self.cfg.client_fraction * k as f64).round() as usize).clamp(1, k);
        let mut ids: Vec<usize> = (0..k).collect();
        if count < k {
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, &[SAMPLE_STREAM, round as u64])));
            ids.truncate(count);
            ids.sort_unstable();
        }
        ids
    }

    /// Runs local training on the sampled clients and returns their uploads
    /// in client order.
    pub fn collect_uploads(&mut self, sampled: &[usize]) -> Result<Vec<Upload>> {
        let mut selected = vec![false; self.clients.len()];
        sampled.iter().for_each(|&i| selected[i] = true);
        let Federation { method, cfg, clients, global, .. } = self;
        let (method, cfg, global) = (*method, &*cfg, &*global);
        let work = |c: &mut ClientState| -> Result<Option<Upload>> {
            if selected[c.id] {
                c.local_round(method, global, cfg)
            } else {
                Ok(None)
            }
        };
        let results: Vec<Result<Option<Upload>>> = if cfg.parallel {
            clients.par_iter_mut().map(work).collect()
        } else {
            clients.iter_mut().map(work).collect()
        };
        let mut uploads = Vec::new();
        for r in results {
            uploads.extend(r?);
        }
        Ok(uploads)
    }

    /// Replaces the server state with the aggregate of `uploads`.
    pub fn aggregate(&mut self, uploads: &[Upload]) -> Result<()> {
        let weights: Vec<f64> = uploads.iter().map(|u| u.weight).collect();
        let mismatch = || Error::Parameter(format!("unexpected upload payload for {}", self.method));
        match &mut self.global {
            GlobalState::Gls { theta, phi } => {
                if uploads.is_empty() {
                    return Ok(());
                }
                let mut thetas = Vec::with_capacity(uploads.len());
                let mut phis = Vec::with_capacity(uploads.len());
                for u in uploads {
                    let Payload::Gls { theta, phi } = &u.payload else { return Err(mismatch()) };
                    thetas.push(theta.clone());
                    phis.push(phi.clone());
                }
                *theta = fedavg_aggregate(&thetas, &weights)?;
                *phi = fedavg_aggregate(&phis, &weights)?;
            }
            GlobalState::Shared(model) => {
                if uploads.is_empty() {
                    return Ok(());
                }
                let models = uploads
                    .iter()
                    .map(|u| match &u.payload {
                        Payload::Model(m) => Ok(m.clone()),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                *model = fedavg_aggregate(&models, &weights)?;
            }
            GlobalState::Grouped { gnn, mlp } => {
                let (mut gnns, mut gw, mut mlps, mut mw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for u in uploads {
                    match &u.payload {
                        Payload::Model(Model::Gcn(p)) => {
                            gnns.push(p.clone());
                            gw.push(u.weight);
                        }
                        Payload::Model(Model::Mlp(p)) => {
                            mlps.push(p.clone());
                            mw.push(u.weight);
                        }
                        _ => return Err(mismatch()),
                    }
                }
                if !gnns.is_empty() {
                    *gnn = fedavg_aggregate(&gnns, &gw)?;
                }
                if !mlps.is_empty() {
                    *mlp = fedavg_aggregate(&mlps, &mw)?;
                }
            }
            GlobalState::Prototypes(global) => {
                let sets = uploads
                    .iter()
                    .map(|u| match &u.payload {
                        Payload::Prototypes(p) => Ok(p.clone()),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if !sets.is_empty() {
                    *global = aggregate_prototypes(&sets);
                }
            }
            GlobalState::Local => {
                if !uploads.is_empty() {
                    return Err(mismatch());
                }
            }
        }
        Ok(())
    }

    /// Per-client metrics under the current server state.
    pub fn evaluate(&self) -> Result<Vec<ClientMetrics>> {
        let global = &self.global;
        if self.cfg.parallel {
            self.clients.par_iter().map(|c| c.evaluate(global)).collect()
        } else {
            self.clients.iter().map(|c| c.evaluate(global)).collect()
        }
    }

    /// One full round: sample, train locally, aggregate, evaluate.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        self.round += 1;
        let sampled = self.sample_clients(self.round);
        let uploads = self.collect_uploads(&sampled)?;
        self.aggregate(&uploads)?;
        let clients = self.evaluate()?;
        let mut m = RoundMetrics::from_clients(self.method, self.seed, self.round, clients);
        m.wall_time_s = start.elapsed().as_secs_f64();
        Ok(m)
    }
}

/// Trains `method` for `cfg.rounds` rounds from `seed`.
pub fn run_federation(method: Method, cfg: &FederationConfig, data: Vec<ClientData>, seed: u64) -> Result<FederationOutcome> {
    let mut fed = Federation::new(method, cfg, data, seed)?;
    let rounds = (0..cfg.rounds).map(|_| fed.step()).collect::<Result<Vec<_>>>()?;
    Ok(FederationOutcome { rounds, global: fed.global })
}

/// Same as [`run_federation`] but only for the comparison methods.
pub fn run_baseline(method: Method, cfg: &FederationConfig, data: Vec<ClientData>, seed: u64) -> Result<FederationOutcome> {
    if method == Method::FedGls {
        return Err(Error::Config("fedgls is not a baseline".into()));
    }
    run_federation(method, cfg, data, seed)
}
