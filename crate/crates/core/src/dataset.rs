//! TSV dataset format.
//!
//! A dataset directory holds
//! - `nodes.tsv`: `id<TAB>label<TAB>f1,f2,...,fd`, ids dense `0..n`
//! - `edges.tsv`: `u<TAB>v` with `u < v`, undirected, no duplicates
//! - `partition.tsv` (optional): `id<TAB>client`
//!
//! Features are written with Rust's shortest round-trip float formatting, so
//! a written graph reloads bit-for-bit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks, Partition};
use crate::numerics::Matrix;

pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const PARTITION_FILE: &str = "partition.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub partition: Option<Partition>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, raw: Option<&str>) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let parse = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let raw = raw.ok_or_else(|| parse(format!("missing {what}")))?;
    raw.trim().parse().map_err(|e| parse(format!("bad {what} '{raw}': {e}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let nodes_path = dir.join(NODES_FILE);
    let text = read(&nodes_path)?;
    let mut rows: Vec<Option<(usize, Vec<f64>)>> = Vec::new();
    let mut dim = None;
    for (line, l) in lines(&text) {
        let mut cols = l.split('\t');
        let id: usize = field(&nodes_path, line, "node id", cols.next())?;
        let label: usize = field(&nodes_path, line, "label", cols.next())?;
        let feats_raw: &str = cols.next().ok_or_else(|| Error::Parse {
            path: nodes_path.clone(),
            line,
            msg: "missing feature list".into(),
        })?;
        if cols.next().is_some() {
            return Err(Error::Parse { path: nodes_path.clone(), line, msg: "expected 3 tab-separated columns".into() });
        }
        let feats = feats_raw
            .split(',')
            .map(|f| field::<f64>(&nodes_path, line, "feature", Some(f)))
            .collect::<Result<Vec<_>>>()?;
        if feats.iter().any(|f| !f.is_finite()) {
            return Err(Error::Parse { path: nodes_path.clone(), line, msg: "non-finite feature".into() });
        }
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(Error::Parse {
                    path: nodes_path.clone(),
                    line,
                    msg: format!("{} features, earlier lines have {d}", feats.len()),
                })
            }
            _ => {}
        }
        if rows.len() <= id {
            rows.resize(id + 1, None);
        }
        if rows[id].replace((label, feats)).is_some() {
            return Err(Error::Parse { path: nodes_path.clone(), line, msg: format!("duplicate node id {id}") });
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no nodes", nodes_path.display())));
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::Data(format!("{}: node ids are not dense, {missing} is missing", nodes_path.display())));
    }
    let n = rows.len();
    let d = dim.unwrap_or(0);
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (label, feats) in rows.into_iter().flatten() {
        labels.push(label);
        data.extend(feats);
    }
    let x = Matrix::from_vec(n, d, data)?;

    let edges_path = dir.join(EDGES_FILE);
    let text = read(&edges_path)?;
    let mut seen = BTreeSet::new();
    for (line, l) in lines(&text) {
        let mut cols = l.split('\t');
        let u: usize = field(&edges_path, line, "source id", cols.next())?;
        let v: usize = field(&edges_path, line, "target id", cols.next())?;
        if cols.next().is_some() {
            return Err(Error::Parse { path: edges_path.clone(), line, msg: "expected 2 tab-separated columns".into() });
        }
        if let Some(bad) = [u, v].into_iter().find(|&id| id >= n) {
            return Err(Error::Data(format!("{}:{line}: edge references unknown node id {bad}", edges_path.display())));
        }
        if u >= v {
            return Err(Error::Parse { path: edges_path.clone(), line, msg: format!("edge ({u}, {v}) must satisfy u < v") });
        }
        if !seen.insert((u, v)) {
            return Err(Error::Parse { path: edges_path.clone(), line, msg: format!("duplicate edge ({u}, {v})") });
        }
    }
    let graph = Graph::new(x, seen.into_iter().collect(), labels, Masks::default())?;

    let part_path = dir.join(PARTITION_FILE);
    let partition = if part_path.exists() { Some(load_partition(&part_path, n)?) } else { None };
    Ok(Dataset { graph, partition })
}

fn load_partition(path: &Path, n: usize) -> Result<Partition> {
    let text = read(path)?;
    let mut raw: Vec<Option<usize>> = vec![None; n];
    for (line, l) in lines(&text) {
        let mut cols = l.split('\t');
        let id: usize = field(path, line, "node id", cols.next())?;
        let client: usize = field(path, line, "client id", cols.next())?;
        if id >= n {
            return Err(Error::Data(format!("{}:{line}: unknown node id {id}", path.display())));
        }
        if raw[id].replace(client).is_some() {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: format!("node {id} assigned twice") });
        }
    }
    if let Some(missing) = raw.iter().position(Option::is_none) {
        return Err(Error::Data(format!("{}: node {missing} has no client", path.display())));
    }
    let raw: Vec<usize> = raw.into_iter().flatten().collect();
    // keep the file's client ids when they are already dense
    let k = raw.iter().max().map_or(0, |m| m + 1);
    let used: BTreeSet<usize> = raw.iter().copied().collect();
    if used.len() == k {
        Ok(Partition { assignment: raw, num_communities: k })
    } else {
        Ok(Partition::from_assignment(&raw))
    }
}

pub fn write_dataset(dir: &Path, graph: &Graph, partition: Option<&Partition>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let mut nodes = String::new();
    for i in 0..graph.num_nodes() {
        let _ = write!(nodes, "{i}\t{}\t", graph.labels[i]);
        for (j, f) in graph.x.row(i).iter().enumerate() {
            if j > 0 {
                nodes.push(',');
            }
            let _ = write!(nodes, "{f:?}");
        }
        nodes.push('\n');
    }
    write(NODES_FILE, nodes)?;
    let edges: String = graph.edges.iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    write(EDGES_FILE, edges)?;
    if let Some(p) = partition {
        let body: String = p.assignment.iter().enumerate().map(|(i, c)| format!("{i}\t{c}\n")).collect();
        write(PARTITION_FILE, body)?;
    }
    Ok(())
}
