//! Experiment configuration and the runners behind the `optimize` and
//! `scaling` commands.
//!
//! Per chain `<label>` the runner writes `trace_<label>.csv`,
//! `network_<label>.csv`, `result_<label>.json` and `timing_<label>.json`
//! into the output directory, plus one `nodes.csv` for the bank set.
//! Everything except the timing file is a deterministic function of the
//! configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplification::{self, PsiReport};
use crate::error::{Error, Result};
use crate::generators::{generate_population, EquityReconstruction, PopulationSpec};
use crate::io::{self, NetworkOptions, TraceWriter};
use crate::metrics::{self, AssortativityResult, NetworkSummary, NodeProperty};
use crate::model::{BankSet, ExposureMatrix};
use crate::optimizer::{self, AnnealConfig, Direction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSource {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    #[serde(default)]
    pub largest_scc: bool,
    #[serde(default)]
    pub net_reciprocal: bool,
    #[serde(default)]
    pub equity_seed: u64,
    /// Start the chains from the loaded matrix rather than the
    /// proportional fill.
    #[serde(default = "yes")]
    pub start_from_input: bool,
}

fn yes() -> bool {
    true
}

impl NetworkSource {
    pub fn options(&self) -> NetworkOptions {
        NetworkOptions {
            largest_scc: self.largest_scc,
            net_reciprocal: self.net_reciprocal,
            equity_seed: self.equity_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "leverage")]
    pub source: NodeProperty,
    #[serde(default = "leverage")]
    pub target: NodeProperty,
    /// Properties for the binning-free edge-level correlation.
    #[serde(default = "liability_leverage")]
    pub edge_source: NodeProperty,
    #[serde(default = "leverage")]
    pub edge_target: NodeProperty,
}

fn default_bins() -> usize {
    metrics::DEFAULT_BINS
}
fn leverage() -> NodeProperty {
    NodeProperty::Leverage
}
fn liability_leverage() -> NodeProperty {
    NodeProperty::LiabilityLeverage
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_bins: default_bins(),
            source: leverage(),
            target: leverage(),
            edge_source: liability_leverage(),
            edge_target: leverage(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub label: String,
    pub anneal: AnnealConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub population: Option<PopulationSpec>,
    #[serde(default)]
    pub network: Option<NetworkSource>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub chains: Vec<ChainConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn toml_error(path: &str, text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
        .unwrap_or(0);
    Error::Parse {
        path: path.to_string(),
        line,
        message: e.message().to_string(),
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| toml_error(origin, text, e))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.out_dir);
        if let Some(net) = cfg.network.as_mut() {
            resolve(&mut net.nodes);
            resolve(&mut net.edges);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, &path.display().to_string(), base)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        match (&self.population, &self.network) {
            (Some(_), Some(_)) => return fail("give either [population] or [network], not both".into()),
            (None, None) => return fail("one of [population] or [network] is required".into()),
            _ => {}
        }
        if let Some(net) = &self.network {
            for p in [&net.nodes, &net.edges] {
                if !p.is_file() {
                    return fail(format!("input file {} does not exist", p.display()));
                }
            }
        }
        if self.chains.is_empty() {
            return fail("at least one [[chains]] entry is required".into());
        }
        if self.metrics.n_bins < 2 {
            return fail("metrics.n_bins must be at least 2".into());
        }
        let mut labels = std::collections::HashSet::new();
        for c in &self.chains {
            let ok = !c.label.is_empty()
                && c.label
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch));
            if !ok {
                return fail(format!(
                    "chain label '{}' must be non-empty and use only [A-Za-z0-9._-]",
                    c.label
                ));
            }
            if !labels.insert(c.label.as_str()) {
                return fail(format!("duplicate chain label '{}'", c.label));
            }
            c.anneal.validate()?;
        }
        Ok(())
    }
}

/// What the chains were run on, echoed into every result file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceEcho {
    Population(PopulationSpec),
    Network(NetworkSource),
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainResult {
    pub schema_version: u32,
    pub label: String,
    pub seed: u64,
    pub direction: Direction,
    pub sweeps_completed: usize,
    pub psi: PsiReport,
    pub summary: NetworkSummary,
    /// `None` when the property is degenerate on the final support.
    pub assortativity: Option<AssortativityResult>,
    pub edge_correlation: Option<f64>,
    pub accepted_moves: u64,
    pub null_proposals: u64,
    pub config: AnnealConfig,
    pub metrics: MetricsConfig,
    pub source: SourceEcho,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub result: ChainResult,
    pub matrix: ExposureMatrix,
    pub trace: optimizer::AnnealTrace,
}

/// Bank set, node ids and optional starting matrix for a config.
pub fn prepare_inputs(
    cfg: &ExperimentConfig,
) -> Result<(Vec<String>, Arc<BankSet>, Option<ExposureMatrix>, SourceEcho)> {
    if let Some(spec) = &cfg.population {
        let bs = Arc::new(generate_population(spec)?);
        return Ok((io::default_ids(bs.len()), bs, None, SourceEcho::Population(spec.clone())));
    }
    let net = cfg
        .network
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no bank source".into()))?;
    let loaded = io::load_network(&net.nodes, &net.edges, &net.options())?;
    let bs = Arc::clone(loaded.banks());
    let start = net.start_from_input.then_some(loaded.exposures);
    Ok((loaded.ids, bs, start, SourceEcho::Network(net.clone())))
}

pub fn network_metrics(
    m: &ExposureMatrix,
    mc: &MetricsConfig,
) -> (NetworkSummary, Option<AssortativityResult>, Option<f64>) {
    let summary = metrics::network_summary(m);
    let assortativity = metrics::scalar_assortativity(m, mc.source, mc.target, mc.n_bins).ok();
    let edge = metrics::edge_correlation(m, mc.edge_source, mc.edge_target).ok();
    (summary, assortativity, edge)
}

fn run_chain(
    chain: &ChainConfig,
    bs: &Arc<BankSet>,
    ids: &[String],
    start: Option<ExposureMatrix>,
    cfg: &ExperimentConfig,
    source: &SourceEcho,
) -> Result<ChainOutcome> {
    let clock = Instant::now();
    let out = &cfg.out_dir;
    let label = &chain.label;
    let mut writer = TraceWriter::create(&out.join(format!("trace_{label}.csv")))?;
    let mut write_error = None;
    let outcome = optimizer::anneal_with_observer(Arc::clone(bs), &chain.anneal, start, |r| {
        if write_error.is_none() {
            write_error = writer.write(r).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }

    let (summary, assortativity, edge_correlation) = network_metrics(&outcome.matrix, &cfg.metrics);
    let result = ChainResult {
        schema_version: SCHEMA_VERSION,
        label: label.clone(),
        seed: chain.anneal.rng_seed,
        direction: chain.anneal.direction,
        sweeps_completed: outcome.trace.records.len(),
        psi: outcome.report,
        summary,
        assortativity,
        edge_correlation,
        accepted_moves: outcome.accepted_moves,
        null_proposals: outcome.null_proposals,
        config: chain.anneal.clone(),
        metrics: cfg.metrics.clone(),
        source: source.clone(),
    };
    io::write_edges(&out.join(format!("network_{label}.csv")), ids, &outcome.matrix)?;
    io::write_json(&out.join(format!("result_{label}.json")), &result)?;
    io::write_json(
        &out.join(format!("timing_{label}.json")),
        &Timing {
            label: label.clone(),
            wall_seconds: clock.elapsed().as_secs_f64(),
        },
    )?;
    Ok(ChainOutcome {
        result,
        matrix: outcome.matrix,
        trace: outcome.trace,
    })
}

/// Runs every chain of `cfg` (in parallel) and writes the artifacts.
/// Results are returned in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ChainOutcome>> {
    cfg.validate()?;
    let (ids, bs, start, source) = prepare_inputs(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| Error::Io {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;
    io::write_nodes(&cfg.out_dir.join("nodes.csv"), &ids, &bs)?;
    cfg.chains
        .par_iter()
        .map(|chain| run_chain(chain, &bs, &ids, start.clone(), cfg, &source))
        .collect()
}

/// `Psi(N) = psi_inf + amplitude * N^(-exponent)`, least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteSizeFit {
    pub psi_inf: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub rss: f64,
}

fn linear_fit_at(ns: &[f64], ys: &[f64], gamma: f64) -> (f64, f64, f64) {
    let xs: Vec<f64> = ns.iter().map(|n| n.powf(-gamma)).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, rss)
}

/// Profiles out the linear parameters and searches the exponent on
/// `[0.05, 5]` (log grid, then golden section). Needs three sizes.
pub fn fit_finite_size(ns: &[f64], psi: &[f64]) -> Option<FiniteSizeFit> {
    if ns.len() < 3 || ns.len() != psi.len() || ns.iter().any(|&n| !(n > 0.0)) {
        return None;
    }
    let rss = |g: f64| linear_fit_at(ns, psi, g).2;
    let (lo, hi) = (0.05f64.ln(), 5f64.ln());
    let steps = 200;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| (lo + (hi - lo) * k as f64 / steps as f64).exp())
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| rss(grid[a]).total_cmp(&rss(grid[b])))?;
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(steps)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if rss(c) < rss(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let gamma = 0.5 * (a + b);
    let (psi_inf, amplitude, rss) = linear_fit_at(ns, psi, gamma);
    Some(FiniteSizeFit {
        psi_inf,
        amplitude,
        exponent: gamma,
        rss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "unit")]
    pub rescale: f64,
    /// Template; its direction and seed apply to every size.
    pub anneal: AnnealConfig,
    pub out_dir: PathBuf,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n_banks: usize,
    pub psi: f64,
    pub lambda: f64,
    pub assortativity: Option<f64>,
    pub mean_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingOutcome {
    pub schema_version: u32,
    pub direction: Direction,
    pub rescale: f64,
    pub points: Vec<ScalingPoint>,
    pub fit: Option<FiniteSizeFit>,
}

/// Grid populations at each size, one chain each, outputs under
/// `out_dir/n<N>/`; the summary goes to `out_dir/scaling_<direction>.json`.
pub fn run_scaling(cfg: &ScalingConfig) -> Result<ScalingOutcome> {
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidConfig("no sizes given".into()));
    }
    cfg.anneal.validate()?;
    let dir = match cfg.anneal.direction {
        Direction::Minimize => "minimize",
        Direction::Maximize => "maximize",
    };
    let points = cfg
        .sizes
        .par_iter()
        .map(|&n| {
            let exp = ExperimentConfig {
                out_dir: cfg.out_dir.join(format!("n{n}")),
                population: Some(PopulationSpec::grid(n, cfg.rescale)),
                network: None,
                metrics: MetricsConfig::default(),
                chains: vec![ChainConfig {
                    label: dir.to_string(),
                    anneal: cfg.anneal.clone(),
                }],
            };
            let out = run_experiment(&exp)?.remove(0).result;
            Ok(ScalingPoint {
                n_banks: n,
                psi: out.psi.psi_total,
                lambda: out.psi.lambda,
                assortativity: out.assortativity.map(|a| a.r),
                mean_degree: out.summary.mean_degree,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = points.iter().map(|p| p.n_banks as f64).collect();
    let ps: Vec<f64> = points.iter().map(|p| p.psi).collect();
    let outcome = ScalingOutcome {
        schema_version: SCHEMA_VERSION,
        direction: cfg.anneal.direction,
        rescale: cfg.rescale,
        fit: fit_finite_size(&ns, &ps),
        points,
    };
    io::write_json(&cfg.out_dir.join(format!("scaling_{dir}.json")), &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquityResampling {
    pub n_samples: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub values: Vec<f64>,
}

/// `Psi` of fixed currency exposures under `n_samples` independent equity
/// reconstructions (seeds `base_seed`, `base_seed + 1`, ...).
pub fn equity_resampling(
    amounts: &DMatrix<f64>,
    n_samples: usize,
    base_seed: u64,
    t_terms: usize,
) -> Result<EquityResampling> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 equity samples".into()));
    }
    let assets: Vec<f64> = amounts.row_iter().map(|r| r.sum()).collect();
    let liabilities: Vec<f64> = amounts.column_iter().map(|c| c.sum()).collect();
    let values = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                base_seed.wrapping_add(k),
            );
            let equity = EquityReconstruction::default().apply(&assets, &liabilities, &mut rng)?;
            let bs = Arc::new(BankSet::new(equity, assets.clone(), liabilities.clone())?);
            let m = ExposureMatrix::from_currency(bs, amounts.clone())?;
            Ok(amplification::psi_full(&m, t_terms)?.psi_total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = n_samples as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(EquityResampling {
        n_samples,
        mean,
        std: var.sqrt(),
        values,
    })
}
