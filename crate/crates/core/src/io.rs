//! CSV network files, trace/result emission.
//!
//! Nodes: `id,equity,assets,liabilities` (the `equity` column may be
//! omitted, in which case equities are reconstructed from the margins).
//! Edges: `source,target,exposure` in currency units; `source` lends to
//! `target`, i.e. the amount is an asset of `source`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::reconstruct_equity;
use crate::model::{BankSet, ExposureMatrix};
use crate::optimizer::TraceRecord;

pub const TRACE_COLUMNS: [&str; 6] = [
    "n",
    "psi",
    "lambda",
    "assortativity",
    "mean_degree",
    "acceptance_rate",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Rows of a nodes file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub ids: Vec<String>,
    pub equity: Option<Vec<f64>>,
    pub assets: Vec<f64>,
    pub liabilities: Vec<f64>,
}

/// One edge row, ids already resolved to node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRow {
    pub source: usize,
    pub target: usize,
    pub exposure: f64,
    pub line: u64,
}

struct Columns {
    path: String,
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(path: &Path, headers: &csv::StringRecord, allowed: &[&str]) -> Result<Self> {
        let path = path.display().to_string();
        let mut index = HashMap::new();
        for (k, name) in headers.iter().enumerate() {
            if !allowed.contains(&name) {
                return Err(Error::Parse {
                    path,
                    line: 1,
                    message: format!("unexpected column '{name}', expected {allowed:?}"),
                });
            }
            if index.insert(name.to_string(), k).is_some() {
                return Err(Error::Parse {
                    path,
                    line: 1,
                    message: format!("duplicate column '{name}'"),
                });
            }
        }
        Ok(Self { path, index })
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing column '{name}'"),
        })
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, k: usize, line: u64) -> Result<&'r str> {
        rec.get(k).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("missing field {}", k + 1),
        })
    }

    fn number(&self, rec: &csv::StringRecord, k: usize, line: u64, name: &str) -> Result<f64> {
        let raw = self.field(rec, k, line)?;
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                path: self.path.clone(),
                line,
                message: format!("{name} '{raw}' is not a finite number"),
            }),
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

pub fn read_nodes(path: &Path) -> Result<NodeTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers, &["id", "equity", "assets", "liabilities"])?;
    let k_id = cols.require("id")?;
    let k_a = cols.require("assets")?;
    let k_l = cols.require("liabilities")?;
    let k_e = cols.index.get("equity").copied();

    let mut table = NodeTable {
        ids: Vec::new(),
        equity: k_e.map(|_| Vec::new()),
        assets: Vec::new(),
        liabilities: Vec::new(),
    };
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = cols.field(&rec, k_id, line)?.to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: cols.path.clone(),
                line,
                message: "empty node id".into(),
            });
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::Parse {
                path: cols.path.clone(),
                line,
                message: format!("duplicate node id '{id}'"),
            });
        }
        table.assets.push(cols.number(&rec, k_a, line, "assets")?);
        table.liabilities.push(cols.number(&rec, k_l, line, "liabilities")?);
        if let (Some(k), Some(eq)) = (k_e, table.equity.as_mut()) {
            eq.push(cols.number(&rec, k, line, "equity")?);
        }
        table.ids.push(id);
    }
    Ok(table)
}

/// Reads an edge list against known node ids. Duplicate rows are summed
/// by the caller.
pub fn read_edges(path: &Path, ids: &[String]) -> Result<Vec<EdgeRow>> {
    let lookup: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers, &["source", "target", "exposure"])?;
    let k_s = cols.require("source")?;
    let k_t = cols.require("target")?;
    let k_x = cols.require("exposure")?;

    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let resolve = |k: usize| -> Result<usize> {
            let id = cols.field(&rec, k, line)?;
            lookup.get(id).copied().ok_or_else(|| Error::UnknownNodeId {
                path: cols.path.clone(),
                line,
                id: id.to_string(),
            })
        };
        let source = resolve(k_s)?;
        let target = resolve(k_t)?;
        if source == target {
            return Err(Error::SelfLoopEdge {
                path: cols.path.clone(),
                line,
                id: ids[source].clone(),
            });
        }
        let exposure = cols.number(&rec, k_x, line, "exposure")?;
        if exposure < 0.0 {
            return Err(Error::NegativeExposure {
                path: cols.path.clone(),
                line,
                value: exposure,
            });
        }
        edges.push(EdgeRow {
            source,
            target,
            exposure,
            line,
        });
    }
    Ok(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOptions {
    /// Keep only the largest strongly connected component.
    #[serde(default)]
    pub largest_scc: bool,
    /// Replace reciprocal pairs by one edge carrying the difference.
    #[serde(default)]
    pub net_reciprocal: bool,
    /// Seed for equity reconstruction when the nodes file has no equity.
    #[serde(default)]
    pub equity_seed: u64,
}

#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    /// Node ids of the retained banks, in matrix order.
    pub ids: Vec<String>,
    pub exposures: ExposureMatrix,
    /// Whether equities were reconstructed rather than read.
    pub equity_reconstructed: bool,
}

impl LoadedNetwork {
    pub fn banks(&self) -> &Arc<BankSet> {
        self.exposures.banks()
    }
}

/// `A_ij <- max(A_ij - A_ji, 0)`.
pub fn net_reciprocal(amounts: &mut DMatrix<f64>) {
    let n = amounts.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (amounts[(i, j)], amounts[(j, i)]);
            let d = a - b;
            amounts[(i, j)] = d.max(0.0);
            amounts[(j, i)] = (-d).max(0.0);
        }
    }
}

/// Indices of the largest strongly connected component of the support,
/// ascending. Ties go to the component holding the smallest index.
pub fn largest_scc(amounts: &DMatrix<f64>) -> Vec<usize> {
    let n = amounts.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if amounts[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut best: Vec<usize> = Vec::new();
    for comp in tarjan_scc(&g) {
        let mut comp: Vec<usize> = comp.into_iter().map(|v| v.index()).collect();
        comp.sort_unstable();
        let better = comp.len() > best.len() || (comp.len() == best.len() && comp[0] < best[0]);
        if better {
            best = comp;
        }
    }
    best
}

/// Loads a network. Declared margins must match the edge sums unless a
/// transformation is requested, in which case margins are re-derived from
/// the transformed edges.
pub fn load_network(
    nodes_path: &Path,
    edges_path: &Path,
    opts: &NetworkOptions,
) -> Result<LoadedNetwork> {
    let nodes = read_nodes(nodes_path)?;
    let edges = read_edges(edges_path, &nodes.ids)?;
    let n = nodes.ids.len();
    let mut amounts = DMatrix::zeros(n, n);
    for e in &edges {
        amounts[(e.source, e.target)] += e.exposure;
    }

    let transformed = opts.net_reciprocal || opts.largest_scc;
    if opts.net_reciprocal {
        net_reciprocal(&mut amounts);
    }
    let keep: Vec<usize> = if opts.largest_scc {
        largest_scc(&amounts)
    } else {
        (0..n).collect()
    };
    let amounts = amounts.select_rows(&keep).select_columns(&keep);
    let ids: Vec<String> = keep.iter().map(|&k| nodes.ids[k].clone()).collect();

    let (assets, liabilities) = if transformed {
        let a = amounts.row_iter().map(|r| r.sum()).collect();
        let l = amounts.column_iter().map(|c| c.sum()).collect();
        (a, l)
    } else {
        (nodes.assets.clone(), nodes.liabilities.clone())
    };
    let (equity, equity_reconstructed) = match &nodes.equity {
        Some(e) => (keep.iter().map(|&k| e[k]).collect(), false),
        None => (
            reconstruct_equity(&assets, &liabilities, opts.equity_seed)?,
            true,
        ),
    };
    let banks = Arc::new(BankSet::new(equity, assets, liabilities)?);
    let exposures = ExposureMatrix::from_currency(banks, amounts)?;
    exposures.ensure_feasible()?;
    Ok(LoadedNetwork {
        ids,
        exposures,
        equity_reconstructed,
    })
}

/// Loads only the nodes file as a bank set.
pub fn load_bank_set(nodes_path: &Path, equity_seed: u64) -> Result<(Vec<String>, BankSet)> {
    let nodes = read_nodes(nodes_path)?;
    let equity = match nodes.equity {
        Some(e) => e,
        None => reconstruct_equity(&nodes.assets, &nodes.liabilities, equity_seed)?,
    };
    let bs = BankSet::new(equity, nodes.assets, nodes.liabilities)?;
    Ok((nodes.ids, bs))
}

/// `b0, b1, ...` ids for generated populations.
pub fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("b{i}")).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

// `{}` on f64 prints the shortest decimal that parses back to the same value.
pub fn write_nodes(path: &Path, ids: &[String], bs: &BankSet) -> Result<()> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "id,equity,assets,liabilities")?;
        for (k, id) in ids.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                id,
                bs.equity()[k],
                bs.assets()[k],
                bs.liabilities()[k]
            )?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Support of `m` as currency amounts.
pub fn write_edges(path: &Path, ids: &[String], m: &ExposureMatrix) -> Result<()> {
    let amounts = m.to_currency();
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "source,target,exposure")?;
        for i in 0..m.n() {
            for j in 0..m.n() {
                if m.alpha()[(i, j)] > 0.0 {
                    writeln!(w, "{},{},{}", ids[i], ids[j], amounts[(i, j)])?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Streams trace records, flushing after each row so that an aborted run
/// leaves every completed sweep on disk.
pub struct TraceWriter {
    path: std::path::PathBuf,
    inner: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = create(path)?;
        writeln!(inner, "{}", TRACE_COLUMNS.join(",")).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        writeln!(
            self.inner,
            "{},{},{},{},{},{}",
            r.n, r.psi, r.lambda, r.assortativity, r.mean_degree, r.acceptance_rate
        )
        .and_then(|_| self.inner.flush())
        .map_err(io_err(&self.path))
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = TraceWriter::create(path)?;
    records.iter().try_for_each(|r| w.write(r))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("trace header must be {}", TRACE_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |k: usize| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("bad value in column {}", TRACE_COLUMNS[k]),
        };
        let num = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(k));
        out.push(TraceRecord {
            n: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(0))?,
            psi: num(1)?,
            lambda: num(2)?,
            assortativity: num(3)?,
            mean_degree: num(4)?,
            acceptance_rate: num(5)?,
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}
