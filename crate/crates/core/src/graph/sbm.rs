use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, Masks};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Planted-partition generator settings. Node labels are `block % classes`
/// and features are unit Gaussian noise plus `feature_signal` on feature
/// `block % feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_signal: f64,
    pub classes: usize,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(Error::Parameter(format!(
                "sbm needs 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim == 0 || self.classes == 0 || self.blocks == 0 {
            return Err(Error::Parameter("sbm blocks, classes and feature_dim must be >= 1".into()));
        }
        if !self.feature_signal.is_finite() {
            return Err(Error::Parameter("sbm feature_signal must be finite".into()));
        }
        Ok(())
    }
}

pub fn sbm_generate(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    cfg.validate()?;
    generate(&vec![cfg.nodes_per_block; cfg.blocks], cfg, seed)
}

fn generate(block_sizes: &[usize], cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<usize> = block_sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
    let n = block.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block[i] == block[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let d = cfg.feature_dim;
    let mut x = Matrix::zeros(n, d);
    for (i, &b) in block.iter().enumerate() {
        for v in x.row_mut(i) {
            *v = StandardNormal.sample(&mut rng);
        }
        x[(i, b % d)] += cfg.feature_signal;
    }

    let labels = block.iter().map(|b| b % cfg.classes).collect();
    Graph::new(x, edges, labels, Masks::default())
}

/// A synthetic federation: `clients` independent planted-partition graphs of
/// `nodes_per_client` nodes each, with one block per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSystem {
    pub clients: usize,
    pub nodes_per_client: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_signal: f64,
}

impl Default for SbmSystem {
    fn default() -> Self {
        Self {
            clients: 4,
            nodes_per_client: 150,
            classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            feature_signal: 1.7,
        }
    }
}

impl SbmSystem {
    /// Parses `key=value` pairs separated by commas, e.g.
    /// `blocks=4,nodes=150,classes=3,p_in=0.1,p_out=0.01,dim=16,signal=1.7`.
    /// Unspecified keys keep their defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut sys = SbmSystem::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sbm entry '{part}' is not key=value")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("sbm {key}: {e}"));
            match key.trim() {
                "blocks" | "clients" => sys.clients = value.parse().map_err(|e| bad(&e))?,
                "nodes" | "nodes_per_client" => sys.nodes_per_client = value.parse().map_err(|e| bad(&e))?,
                "classes" => sys.classes = value.parse().map_err(|e| bad(&e))?,
                "p_in" => sys.p_in = value.parse().map_err(|e| bad(&e))?,
                "p_out" => sys.p_out = value.parse().map_err(|e| bad(&e))?,
                "dim" | "feature_dim" => sys.feature_dim = value.parse().map_err(|e| bad(&e))?,
                "signal" | "feature_signal" => sys.feature_signal = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("unknown sbm key '{other}'"))),
            }
        }
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 1 || self.nodes_per_client < self.classes {
            return Err(Error::Config("sbm needs >= 1 client and nodes >= classes".into()));
        }
        self.block_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn block_config(&self) -> SbmConfig {
        SbmConfig {
            blocks: self.classes,
            nodes_per_block: self.nodes_per_client / self.classes.max(1),
            p_in: self.p_in,
            p_out: self.p_out,
            feature_dim: self.feature_dim,
            feature_signal: self.feature_signal,
            classes: self.classes,
        }
    }

    /// One graph per client; client `c` is drawn from `seed` mixed with `c`.
    /// Leftover nodes (when `nodes_per_client` is not a multiple of
    /// `classes`) go to the first blocks.
    pub fn generate(&self, seed: u64) -> Result<Vec<Graph>> {
        self.validate()?;
        let cfg = self.block_config();
        let base = self.nodes_per_client / self.classes;
        let extra = self.nodes_per_client % self.classes;
        let sizes: Vec<usize> = (0..self.classes).map(|b| base + usize::from(b < extra)).collect();
        (0..self.clients)
            .map(|c| generate(&sizes, &cfg, crate::seed::mix(seed, &[0x5b3, c as u64])))
            .collect()
    }
}
