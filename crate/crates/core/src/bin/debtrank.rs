use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use debtrank::amplification::{self, presets};
use debtrank::analytic::{self, TwoTypeModel};
use debtrank::experiment::{
    self, ChainConfig, ExperimentConfig, MetricsConfig, NetworkSource, ScalingConfig,
};
use debtrank::generators::{generate_population, PopulationSpec};
use debtrank::io::{self, NetworkOptions};
use debtrank::metrics::{self, NodeProperty};
use debtrank::optimizer::{self, AnnealConfig, Direction};
use debtrank::propagation;
use debtrank::{Error, Result};

#[derive(Parser)]
#[command(name = "debtrank", version, about = "DebtRank shock amplification on interbank networks")]
struct Cli {
    /// Seed for every random draw (populations, equities, annealing).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Series terms used to score trial moves.
    #[arg(long, global = true)]
    terms_trial: Option<usize>,
    /// Series terms used for reported Psi values.
    #[arg(long, global = true)]
    terms_final: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic population and a feasible starting network.
    Generate(GenerateArgs),
    /// Propagate a shock through a network.
    Propagate(PropagateArgs),
    /// Shock multiplier and its decomposition.
    Psi(PsiArgs),
    /// Anneal a network towards minimal or maximal Psi.
    Optimize(OptimizeArgs),
    /// Network summary and assortativity.
    Metrics(MetricsArgs),
    /// Closed-form results for the two-type and constant-leverage models.
    Analytic(AnalyticArgs),
    /// Finite-size batch over grid populations.
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct NetworkArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    largest_scc: bool,
    #[arg(long)]
    net_reciprocal: bool,
}

impl NetworkArgs {
    fn load(&self, seed: u64) -> Result<io::LoadedNetwork> {
        io::load_network(
            &self.nodes,
            &self.edges,
            &NetworkOptions {
                largest_scc: self.largest_scc,
                net_reciprocal: self.net_reciprocal,
                equity_seed: seed,
            },
        )
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PopulationKind {
    Pareto,
    Grid,
    TwoType,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "pareto")]
    kind: PopulationKind,
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Leverage rescale factor for grid populations.
    #[arg(long, default_value_t = 1.0)]
    rescale: f64,
    #[arg(long, default_value_t = 5)]
    n1: usize,
    #[arg(long, default_value_t = 50)]
    n2: usize,
    #[arg(long, default_value_t = 2.0)]
    c1: f64,
    #[arg(long, default_value_t = 0.5)]
    c2: f64,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Uniform initial shock.
    #[arg(long, default_value_t = 0.01, conflicts_with = "shock")]
    psi: f64,
    /// CSV with columns `id,h` giving the initial shock per bank.
    #[arg(long)]
    shock: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    t_max: usize,
    /// Draw this many no-bankruptcy targets and report the implied shocks.
    #[arg(long)]
    inverse_samples: Option<usize>,
}

#[derive(Args)]
struct PsiArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Repeat with this many independent equity reconstructions.
    #[arg(long)]
    equity_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Min,
    Max,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Illustrative,
    Scaling,
}

#[derive(Args)]
struct OptimizeArgs {
    /// TOML experiment file; other options except the globals are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    nodes: Option<PathBuf>,
    #[arg(long, requires = "nodes")]
    edges: Option<PathBuf>,
    #[arg(long)]
    largest_scc: bool,
    #[arg(long)]
    net_reciprocal: bool,
    /// Population to generate when no network is given.
    #[arg(long, value_enum, default_value = "pareto")]
    kind: PopulationKind,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    rescale: f64,
    #[arg(long, value_enum, default_value = "both")]
    direction: DirectionArg,
    #[arg(long, default_value_t = 5000)]
    sweeps: usize,
    #[arg(long, value_enum, default_value = "illustrative")]
    preset: Preset,
    #[arg(long)]
    beta_k: Option<f64>,
    #[arg(long)]
    beta_asym: Option<f64>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value_t = metrics::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value = "leverage")]
    source: NodeProperty,
    #[arg(long, default_value = "leverage")]
    target: NodeProperty,
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(subcommand)]
    model: AnalyticModel,
}

#[derive(Subcommand)]
enum AnalyticModel {
    /// Two leverage classes interpolated by kappa.
    TwoType {
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        n2: usize,
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        c2: f64,
        #[arg(long, default_value_t = 0.0, conflicts_with = "kappa_grid")]
        kappa: f64,
        /// Evaluate at this many equally spaced kappa values in [0, kappa_max].
        #[arg(long)]
        kappa_grid: Option<usize>,
    },
    /// Every bank with the same leverage `c`.
    ConstantLeverage {
        #[arg(long)]
        c: f64,
    },
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,30,40")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    rescale: f64,
    #[arg(long, value_enum, default_value = "min")]
    direction: DirectionArg,
    #[arg(long, default_value_t = 5000)]
    sweeps: usize,
    /// Drop the sparsity and asymmetry penalties.
    #[arg(long)]
    unrestricted: bool,
}

struct Globals {
    seed: Option<u64>,
    terms_trial: Option<usize>,
    terms_final: Option<usize>,
    out_dir: Option<PathBuf>,
}

impl Globals {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn final_terms(&self, default: usize) -> usize {
        self.terms_final.unwrap_or(default)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn tune(&self, cfg: &mut AnnealConfig) {
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(t) = self.terms_trial {
            cfg.trial_terms = t;
        }
        if let Some(t) = self.terms_final {
            cfg.final_terms = t;
        }
    }
}

fn population(kind: PopulationKind, n: usize, rescale: f64, seed: u64) -> PopulationSpec {
    match kind {
        PopulationKind::Pareto => PopulationSpec::illustrative(n, seed),
        PopulationKind::Grid => PopulationSpec::grid(n, rescale),
        PopulationKind::TwoType => PopulationSpec::TwoType {
            n1: n / 2,
            n2: n - n / 2,
            c1: 0.8 * rescale,
            c2: 0.4 * rescale,
            equity: 1.0,
        },
    }
}

fn directions(d: DirectionArg) -> Vec<Direction> {
    match d {
        DirectionArg::Min => vec![Direction::Minimize],
        DirectionArg::Max => vec![Direction::Maximize],
        DirectionArg::Both => vec![Direction::Minimize, Direction::Maximize],
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Minimize => "minimize",
        Direction::Maximize => "maximize",
    }
}

fn generate(g: &Globals, a: &GenerateArgs) -> Result<Value> {
    let out = g.out_dir();
    let (ids, matrix) = match a.kind {
        PopulationKind::TwoType => {
            let model = TwoTypeModel::new(a.n1, a.n2, a.c1, a.c2, a.kappa)?;
            let m = analytic::two_type_exposures(&model)?;
            (io::default_ids(m.n()), m)
        }
        kind => {
            let bs = Arc::new(generate_population(&population(kind, a.n, a.rescale, g.seed()))?);
            let m = optimizer::initial_feasible_matrix(bs)?;
            (io::default_ids(m.n()), m)
        }
    };
    let nodes = out.join("nodes.csv");
    let edges = out.join("edges.csv");
    io::write_nodes(&nodes, &ids, matrix.banks())?;
    io::write_edges(&edges, &ids, &matrix)?;
    Ok(json!({
        "n_banks": matrix.n(),
        "n_edges": metrics::edge_count(&matrix),
        "nodes": nodes,
        "edges": edges,
    }))
}

fn read_shock(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut h = vec![0.0; ids.len()];
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line: line as u64,
        message,
    };
    for (k, row) in text.lines().enumerate().skip(1) {
        let row = row.trim();
        if row.is_empty() {
            continue;
        }
        let (id, value) = row
            .split_once(',')
            .ok_or_else(|| parse_err(k + 1, "expected `id,h`".into()))?;
        let idx = ids.iter().position(|x| x == id.trim()).ok_or_else(|| Error::UnknownNodeId {
            path: path.display().to_string(),
            line: k as u64 + 1,
            id: id.trim().to_string(),
        })?;
        h[idx] = value
            .trim()
            .parse()
            .map_err(|_| parse_err(k + 1, format!("bad shock value '{}'", value.trim())))?;
    }
    Ok(h)
}

fn propagate(g: &Globals, a: &PropagateArgs) -> Result<Value> {
    let net = a.network.load(g.seed())?;
    let lm = net.exposures.lambda();
    let h1 = match &a.shock {
        Some(p) => read_shock(p, &net.ids)?,
        None => vec![a.psi; lm.n()],
    };
    let (states, overflow) = match propagation::propagate(&lm, &h1, a.t_max) {
        Ok(s) => (s, None),
        Err(Error::NonFiniteOverflow { t, last }) => (vec![*last], Some(t)),
        Err(e) => return Err(e),
    };
    let rows: Vec<Value> = states
        .iter()
        .map(|s| {
            json!({
                "t": s.t,
                "total_loss": s.total_loss,
                "n_bankrupt": s.bankrupt.iter().filter(|&&b| b).count(),
            })
        })
        .collect();
    let h_inf = match propagation::h_infinity_exact(&lm, &h1) {
        Ok(h) => {
            let total: f64 = lm.weights().iter().zip(&h).map(|(e, h)| e * h).sum();
            json!({ "h": h, "total_loss": total })
        }
        Err(Error::SupercriticalSystem { lambda }) => json!({ "supercritical": true, "lambda": lambda }),
        Err(e) => return Err(e),
    };
    let mut out = json!({
        "ids": net.ids,
        "lambda": lm.spectral_radius(),
        "states": rows,
        "overflow_at": overflow,
        "h_infinity": h_inf,
    });
    if let Some(k) = a.inverse_samples {
        out["inverse_samples"] = serde_json::to_value(propagation::sample_no_bankruptcy_shocks(
            &lm,
            k,
            g.seed(),
        )?)?;
    }
    if let Some(dir) = &g.out_dir {
        let path = dir.join("propagation.csv");
        let mut text = String::from("t,total_loss,n_bankrupt\n");
        for s in &states {
            let nb = s.bankrupt.iter().filter(|&&b| b).count();
            text.push_str(&format!("{},{},{}\n", s.t, s.total_loss, nb));
        }
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, text))
            .map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
    }
    Ok(out)
}

fn psi(g: &Globals, a: &PsiArgs) -> Result<Value> {
    let net = a.network.load(g.seed())?;
    let terms = g.final_terms(presets::ILLUSTRATIVE_FINAL);
    let report = amplification::psi_full(&net.exposures, terms)?;
    let mut out = serde_json::to_value(&report)?;
    if let Some(k) = a.equity_samples {
        let stats =
            experiment::equity_resampling(&net.exposures.to_currency(), k, g.seed(), terms)?;
        out["equity_resampling"] = serde_json::to_value(stats)?;
    }
    Ok(out)
}

fn optimize(g: &Globals, a: &OptimizeArgs) -> Result<Value> {
    let cfg = match &a.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            cfg.chains.iter_mut().for_each(|c| g.tune(&mut c.anneal));
            if let Some(d) = &g.out_dir {
                cfg.out_dir = d.clone();
            }
            cfg
        }
        None => {
            let chains = directions(a.direction)
                .into_iter()
                .map(|d| {
                    let mut anneal = match a.preset {
                        Preset::Illustrative => AnnealConfig::illustrative(d, a.sweeps, 0),
                        Preset::Scaling => AnnealConfig::scaling(d, a.sweeps, 0),
                    };
                    g.tune(&mut anneal);
                    if let Some(b) = a.beta_k {
                        anneal.beta_k = b;
                    }
                    if let Some(b) = a.beta_asym {
                        anneal.beta_asym = b;
                    }
                    let label = match &a.label {
                        Some(l) => format!("{l}_{}", direction_name(d)),
                        None => direction_name(d).to_string(),
                    };
                    ChainConfig { label, anneal }
                })
                .collect();
            let (population, network) = match (&a.nodes, &a.edges) {
                (Some(nodes), Some(edges)) => (
                    None,
                    Some(NetworkSource {
                        nodes: nodes.clone(),
                        edges: edges.clone(),
                        largest_scc: a.largest_scc,
                        net_reciprocal: a.net_reciprocal,
                        equity_seed: g.seed(),
                        start_from_input: true,
                    }),
                ),
                _ => (Some(population(a.kind, a.n, a.rescale, g.seed())), None),
            };
            ExperimentConfig {
                out_dir: g.out_dir(),
                population,
                network,
                metrics: MetricsConfig::default(),
                chains,
            }
        }
    };
    let outcomes = experiment::run_experiment(&cfg)?;
    let results: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            let r = &o.result;
            json!({
                "label": r.label,
                "direction": r.direction,
                "psi": r.psi.psi_total,
                "lambda": r.psi.lambda,
                "assortativity": r.assortativity.as_ref().map(|x| x.r),
                "mean_degree": r.summary.mean_degree,
                "reciprocal_pairs": r.summary.reciprocal_pairs,
            })
        })
        .collect();
    Ok(json!({ "out_dir": cfg.out_dir, "chains": results }))
}

fn metrics_cmd(g: &Globals, a: &MetricsArgs) -> Result<Value> {
    let net = a.network.load(g.seed())?;
    let mc = MetricsConfig {
        n_bins: a.bins,
        source: a.source,
        target: a.target,
        ..MetricsConfig::default()
    };
    let summary = metrics::network_summary(&net.exposures);
    let assortativity = metrics::scalar_assortativity(&net.exposures, mc.source, mc.target, mc.n_bins);
    let edge = metrics::edge_correlation(&net.exposures, mc.edge_source, mc.edge_target).ok();
    let mut out = json!({
        "summary": summary,
        "edge_correlation": edge,
    });
    match assortativity {
        Ok(r) => out["assortativity"] = serde_json::to_value(r)?,
        Err(e) => out["assortativity_error"] = json!({ "error": e.kind(), "message": e.to_string() }),
    }
    Ok(out)
}

fn analytic_cmd(g: &Globals, a: &AnalyticArgs) -> Result<Value> {
    let terms = g.final_terms(presets::ILLUSTRATIVE_FINAL);
    match &a.model {
        AnalyticModel::TwoType {
            n1,
            n2,
            c1,
            c2,
            kappa,
            kappa_grid,
        } => {
            let base = TwoTypeModel::new(*n1, *n2, *c1, *c2, 0.0)?;
            let kmax = base.kappa_max();
            let kappas: Vec<f64> = match kappa_grid {
                Some(k) if *k >= 2 => (0..*k).map(|i| kmax * i as f64 / (*k - 1) as f64).collect(),
                Some(_) => return Err(Error::InvalidConfig("kappa grid needs at least 2 points".into())),
                None => vec![*kappa],
            };
            let rows = kappas
                .iter()
                .map(|&k| {
                    let m = base.with_kappa(k)?;
                    Ok(json!({
                        "kappa": k,
                        "lambda": analytic::two_type_spectral_radius(&m)?,
                        "psi": analytic::two_type_psi(&m, terms)?,
                    }))
                })
                .collect::<Result<Vec<Value>>>()?;
            Ok(json!({ "kappa_max": kmax, "terms": terms, "points": rows }))
        }
        AnalyticModel::ConstantLeverage { c } => {
            Ok(serde_json::to_value(analytic::constant_leverage_psi(*c, terms)?)?)
        }
    }
}

fn scaling(g: &Globals, a: &ScalingArgs) -> Result<Value> {
    let dirs = directions(a.direction);
    let mut out = Vec::new();
    for d in dirs {
        let mut anneal = AnnealConfig::scaling(d, a.sweeps, 0);
        if a.rescale > 1.0 {
            anneal.trial_terms = presets::SUPERCRITICAL_TRIAL;
        }
        g.tune(&mut anneal);
        if a.unrestricted {
            anneal.beta_k = 0.0;
            anneal.beta_asym = 0.0;
        }
        let cfg = ScalingConfig {
            sizes: a.sizes.clone(),
            rescale: a.rescale,
            anneal,
            out_dir: g.out_dir(),
        };
        out.push(serde_json::to_value(experiment::run_scaling(&cfg)?)?);
    }
    Ok(Value::Array(out))
}

fn run(cli: Cli) -> Result<Value> {
    let g = Globals {
        seed: cli.seed,
        terms_trial: cli.terms_trial,
        terms_final: cli.terms_final,
        out_dir: cli.out_dir,
    };
    // report-only subcommands also keep a copy of their output
    let (value, report) = match &cli.command {
        Command::Generate(a) => (generate(&g, a)?, None),
        Command::Propagate(a) => (propagate(&g, a)?, None),
        Command::Psi(a) => (psi(&g, a)?, Some("psi.json")),
        Command::Optimize(a) => (optimize(&g, a)?, None),
        Command::Metrics(a) => (metrics_cmd(&g, a)?, Some("metrics.json")),
        Command::Analytic(a) => (analytic_cmd(&g, a)?, Some("analytic.json")),
        Command::Scaling(a) => (scaling(&g, a)?, None),
    };
    if let (Some(name), Some(dir)) = (report, &g.out_dir) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        debtrank::io::write_json(&dir.join(name), &value)?;
    }
    Ok(value)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = json!({ "error": "UsageError", "message": e.to_string().trim_end() });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("serializable output");
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
