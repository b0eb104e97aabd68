//! Experiment orchestration: builds the clients for each repetition, runs
//! every selected method, and persists metrics.
//!
//! Output files:
//! - `metrics.jsonl`: one object per (method, repeat, round)
//! - `summary.csv`: mean and population std of final test accuracy per method
//! - `config.toml`: the fully resolved configuration
//! - `timing.json`: wall-clock seconds per run, kept apart so the other
//!   files are byte-reproducible

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::FederationConfig;
use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::federation::{run_federation, select_graphless, ClientData, Method, RoundMetrics};
use crate::graph::{louvain_partition, merge_small_communities, split_masks, Graph, Partition, SplitRatios};
use crate::seed::mix;

const SPLIT_STREAM: u64 = 0x5917;

/// Seed of repetition `r`.
pub fn repeat_seed(master: u64, r: usize) -> u64 {
    master.wrapping_add(r as u64)
}

/// Louvain communities of `g` with small ones merged into neighbours.
pub fn partition_graph(g: &Graph, min_size: usize, seed: u64) -> Result<Partition> {
    let p = louvain_partition(g, seed)?;
    Ok(merge_small_communities(g, &p, min_size))
}

/// Splits the client graphs into train/val/test and marks graphless clients.
pub fn assign_clients(graphs: Vec<Graph>, cfg: &FederationConfig, seed: u64) -> Result<Vec<ClientData>> {
    let k = graphs.len();
    let graphless = match &cfg.graphless_ids {
        Some(ids) => {
            let mut flags = vec![false; k];
            for &i in ids {
                *flags
                    .get_mut(i)
                    .ok_or_else(|| Error::Config(format!("graphless id {i} out of range for {k} clients")))? = true;
            }
            flags
        }
        None => select_graphless(k, cfg.graphless_ratio, seed),
    };
    graphs
        .into_iter()
        .zip(graphless)
        .enumerate()
        .map(|(c, (mut graph, graphless))| {
            graph.masks = split_masks(graph.num_nodes(), SplitRatios::default(), mix(seed, &[SPLIT_STREAM, c as u64]))?;
            Ok(ClientData { graph, graphless })
        })
        .collect()
}

/// The data source of an experiment, loaded once.
pub enum Source {
    Dataset { dataset: Dataset, partition: Partition },
    Sbm(crate::graph::SbmSystem),
}

impl Source {
    /// Loads the dataset (partitioning it with Louvain seeded by the master
    /// seed when no partition file exists) or captures the SBM system.
    pub fn load(cfg: &FederationConfig) -> Result<Self> {
        match (&cfg.dataset, &cfg.sbm) {
            (Some(dir), _) => {
                let dataset = load_dataset(dir)?;
                let partition = match &dataset.partition {
                    Some(p) => p.clone(),
                    None => {
                        let min = cfg.merge_threshold.unwrap_or(cfg.hidden + dataset.graph.num_classes());
                        partition_graph(&dataset.graph, min, cfg.seed)?
                    }
                };
                Ok(Source::Dataset { dataset, partition })
            }
            (None, Some(sys)) => Ok(Source::Sbm(sys.clone())),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }

    /// Client data for one repetition.
    pub fn clients(&self, cfg: &FederationConfig, seed: u64) -> Result<Vec<ClientData>> {
        let graphs = match self {
            Source::Dataset { dataset, partition } => {
                partition.members().iter().map(|m| dataset.graph.induced_subgraph(m)).collect()
            }
            Source::Sbm(sys) => sys.generate(seed)?,
        };
        assign_clients(graphs, cfg, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub repeats: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunTiming {
    pub method: Method,
    pub repeat: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rounds: Vec<RoundMetrics>,
    pub summary: Vec<SummaryRow>,
    pub timing: Vec<RunTiming>,
}

impl ExperimentResult {
    /// Final-round test accuracies of `method`, one per repeat.
    pub fn final_test_acc(&self, method: Method) -> Vec<f64> {
        let last = self.rounds.iter().filter(|r| r.method == method).map(|r| r.round).max().unwrap_or(0);
        self.rounds.iter().filter(|r| r.method == method && r.round == last).map(|r| r.test_acc).collect()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every selected method for `cfg.repeats` repetitions.
pub fn run_experiment(cfg: &FederationConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    let source = Source::load(cfg)?;
    let mut rounds = Vec::new();
    let mut timing = Vec::new();
    let data: Vec<Vec<ClientData>> =
        (0..cfg.repeats).map(|r| source.clients(cfg, repeat_seed(cfg.seed, r))).collect::<Result<_>>()?;
    for &method in &methods {
        for (r, clients) in data.iter().enumerate() {
            let start = Instant::now();
            let seed = repeat_seed(cfg.seed, r);
            let outcome = run_federation(method, cfg, clients.clone(), seed)?;
            rounds.extend(outcome.rounds.into_iter().map(|m| RoundMetrics { repeat: r, ..m }));
            timing.push(RunTiming { method, repeat: r, seconds: start.elapsed().as_secs_f64() });
        }
    }
    let mut result = ExperimentResult { rounds, summary: Vec::new(), timing };
    result.summary = methods
        .iter()
        .map(|&method| {
            let accs = result.final_test_acc(method);
            let (mean_test_acc, std_test_acc) = mean_std(&accs);
            SummaryRow { method, repeats: accs.len(), mean_test_acc, std_test_acc }
        })
        .collect();
    Ok(result)
}

/// 17 significant digits.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

/// One JSON object per line; floats carry 17 significant digits.
pub fn metrics_jsonl(rounds: &[RoundMetrics]) -> String {
    let mut out = String::new();
    for m in rounds {
        let _ = write!(
            out,
            "{{\"method\":\"{}\",\"repeat\":{},\"seed\":{},\"round\":{},\"train_loss\":{},\"val_acc\":{},\"test_acc\":{},\"clients\":[",
            m.method,
            m.repeat,
            m.seed,
            m.round,
            num(m.train_loss),
            num(m.val_acc),
            num(m.test_acc)
        );
        for (i, c) in m.clients.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "{{\"client\":{},\"graphless\":{},\"n\":{},\"train_loss\":{},\"val_acc\":{},\"test_acc\":{}}}",
                c.client,
                c.graphless,
                c.n,
                num(c.train_loss),
                num(c.val_acc),
                num(c.test_acc)
            );
        }
        out.push_str("]}\n");
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,repeats,mean_test_acc,std_test_acc,accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4} ± {:.4}",
            r.method,
            r.repeats,
            num(r.mean_test_acc),
            num(r.std_test_acc),
            r.mean_test_acc,
            r.std_test_acc
        );
    }
    out
}

pub fn write_metrics(result: &ExperimentResult, cfg: &FederationConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = [
        ("metrics.jsonl", metrics_jsonl(&result.rounds)),
        ("summary.csv", summary_csv(&result.summary)),
        ("config.toml", cfg.to_toml()),
        ("timing.json", serde_json::to_string_pretty(&result.timing).expect("timing serializes") + "\n"),
    ];
    for (name, body) in files {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
