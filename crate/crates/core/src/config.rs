//! Experiment configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::Method;
use crate::graph::SbmSystem;
use crate::models::{LearnerVariant, HIDDEN};
use crate::numerics::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Fully resolved run settings. Defaults follow the reference setup:
/// α = β = 0.01, γ = 0.001, τ = 0.2, E = 5, hidden 16, half the clients
/// graphless, Adam, five repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    /// One method, a comma-separated list, or `all`.
    pub method: String,
    pub rounds: usize,
    pub local_epochs: usize,
    /// α, GCN learning rate.
    pub lr_gnn: f64,
    /// β, feature encoder learning rate.
    pub lr_encoder: f64,
    /// γ, graph learner learning rate.
    pub lr_learner: f64,
    pub tau: f64,
    /// Neighbors kept by the graph learner and by the kNN baselines.
    pub k: usize,
    pub hidden: usize,
    pub graphless_ratio: f64,
    /// Explicit graphless client ids; overrides `graphless_ratio`.
    pub graphless_ids: Option<Vec<usize>>,
    pub repeats: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub sbm: Option<SbmSystem>,
    pub optimizer: OptimizerKind,
    pub fedproto_lambda: f64,
    pub learner: LearnerVariant,
    pub learner_activation: Activation,
    pub learner_layers: usize,
    /// Fraction of clients sampled each round.
    pub client_fraction: f64,
    /// Communities smaller than this are merged; defaults to hidden + classes.
    pub merge_threshold: Option<usize>,
    /// Run the clients of a round on a thread pool.
    pub parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            method: "fedgls".into(),
            rounds: 100,
            local_epochs: 5,
            lr_gnn: 0.01,
            lr_encoder: 0.01,
            lr_learner: 0.001,
            tau: 0.2,
            k: 10,
            hidden: HIDDEN,
            graphless_ratio: 0.5,
            graphless_ids: None,
            repeats: 5,
            seed: 0,
            dataset: None,
            sbm: None,
            optimizer: OptimizerKind::Adam,
            fedproto_lambda: 1.0,
            learner: LearnerVariant::Attentive,
            learner_activation: Activation::Relu,
            learner_layers: 2,
            client_fraction: 1.0,
            merge_threshold: None,
            parallel: true,
        }
    }
}

/// Values supplied on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<String>,
    pub rounds: Option<usize>,
    pub local_epochs: Option<usize>,
    pub graphless_ratio: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub sbm: Option<String>,
}

impl FederationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = &o.method {
            self.method = m.clone();
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        take!(rounds, local_epochs, graphless_ratio, k, seed, repeats);
        if let Some(d) = &o.dataset {
            self.dataset = Some(d.clone());
            self.sbm = None;
        }
        if let Some(spec) = &o.sbm {
            self.sbm = Some(SbmSystem::parse(spec)?);
            self.dataset = None;
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.method.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        self.method.split(',').map(|m| m.trim().parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let methods = self.methods()?;
        if methods.is_empty() {
            return err("no method selected".into());
        }
        for (name, v) in [("lr_gnn", self.lr_gnn), ("lr_encoder", self.lr_encoder), ("lr_learner", self.lr_learner), ("fedproto_lambda", self.fedproto_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return err(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.graphless_ratio) {
            return err(format!("graphless_ratio must be in [0, 1], got {}", self.graphless_ratio));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return err(format!("client_fraction must be in (0, 1], got {}", self.client_fraction));
        }
        for (name, v) in [
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("k", self.k),
            ("hidden", self.hidden),
            ("repeats", self.repeats),
            ("learner_layers", self.learner_layers),
        ] {
            if v == 0 {
                return err(format!("{name} must be >= 1"));
            }
        }
        match (&self.dataset, &self.sbm) {
            (Some(_), Some(_)) => return err("set either dataset or sbm, not both".into()),
            (None, None) => return err("no data source: set dataset or sbm".into()),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Reads the TOML file, applies overrides and validates.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<FederationConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            FederationConfig::from_toml(&text)?
        }
        None => FederationConfig::default(),
    };
    cfg.apply(overrides)?;
    if cfg.dataset.is_none() && cfg.sbm.is_none() {
        cfg.sbm = Some(SbmSystem::default());
    }
    cfg.validate()?;
    Ok(cfg)
}
