//! Acceptance criteria, one line each. Exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use debtrank::amplification::psi_full;
use debtrank::analytic::{two_type_lambda_matrix, two_type_matrix, two_type_psi, TwoTypeModel};
use debtrank::experiment::{run_scaling, ScalingConfig};
use debtrank::generators::{generate_population, PopulationSpec};
use debtrank::metrics;
use debtrank::model::spectral_radius;
use debtrank::optimizer::{anneal, metropolis_accept, AnnealConfig, Direction};
use debtrank::propagation::{h_infinity_exact, initial_shock_from_target};
use debtrank::{BankSet, ExposureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, limit_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let secs = t.elapsed().as_secs_f64();
    let in_time = limit_s.is_none_or(|l| secs < l);
    let pass = out.pass && in_time;
    let limit = limit_s.map(|l| format!(" (limit {l} s)")).unwrap_or_default();
    println!(
        "{} [{id}] {name}: {}; {secs:.2} s{limit}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    pass
}

/// Subcritical random network: leverage below 0.85 keeps every row sum of
/// Lambda, hence lambda, under 0.9.
fn subcritical_network(seed: u64) -> ExposureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = Arc::new(common::random_bank_set(10, (0.1, 0.85), &mut rng));
    common::random_feasible(bs, 2000, &mut rng)
}

fn constant_leverage() -> Outcome {
    let c = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let equity: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..3.0)).collect();
    let assets: Vec<f64> = equity.iter().map(|e| c * e).collect();
    let total: f64 = assets.iter().sum();
    let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = raw.iter().sum();
    let liabilities = raw.iter().map(|x| x * total / s).collect();
    let bs = Arc::new(BankSet::new(equity, assets, liabilities).unwrap());
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let m = common::random_feasible(Arc::clone(&bs), 40 * k, &mut rng);
        let psi = psi_full(&m, 200).unwrap().psi_total;
        worst = worst.max((psi - 2.0).abs());
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("max |Psi - 2| = {worst:.2e} over 50 matrices (tol 1e-9)"),
    }
}

fn two_type_lambda() -> Outcome {
    let base = TwoTypeModel::new(5, 50, 2.0, 0.5, 0.0).unwrap();
    let mut errs = Vec::new();
    for (kappa, want) in [(0.0, 2.0), (0.04, 0.8)] {
        let m = base.with_kappa(kappa).unwrap();
        let closed = two_type_lambda_matrix(&m).unwrap().spectral_radius();
        let power = spectral_radius(&two_type_matrix(&m).unwrap()).value;
        errs.push((closed - want).abs().max((power - want).abs()));
    }
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: worst < 1e-10,
        detail: format!(
            "kappa=0: err {:.2e}, kappa=0.04: err {:.2e} (tol 1e-10)",
            errs[0], errs[1]
        ),
    }
}

fn kappa_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let n1 = rng.random_range(1..20);
        let n2 = rng.random_range(1..20);
        let a: f64 = rng.random_range(0.05..0.95);
        let b: f64 = rng.random_range(0.05..0.95);
        let base = TwoTypeModel::new(n1, n2, a.max(b), a.min(b), 0.0).unwrap();
        let kmax = base.kappa_max();
        let psis: Vec<f64> = (0..20)
            .map(|k| two_type_psi(&base.with_kappa(kmax * k as f64 / 19.0).unwrap(), 1000).unwrap())
            .collect();
        for w in psis.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("largest increase {worst:.2e} over 20x20 grid (tol 1e-10)"),
    }
}

fn series_vs_solve() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut series_err, mut trip_err, mut max_lambda) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let m = subcritical_network(seed);
        let lm = m.lambda();
        max_lambda = max_lambda.max(common::eig_radius(lm.matrix()));
        let psi = 0.01;
        let h = h_infinity_exact(&lm, &[psi; 10]).unwrap();
        let h_inf: f64 = lm.weights().iter().zip(&h).map(|(e, x)| e * x).sum();
        let series = psi_full(&m, 200).unwrap().psi_total;
        series_err = series_err.max((series - h_inf / psi).abs());

        let h1: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..0.1)).collect();
        let target = h_infinity_exact(&lm, &h1).unwrap();
        let back = initial_shock_from_target(&lm, &target).unwrap().h1;
        for (a, b) in back.iter().zip(&h1) {
            trip_err = trip_err.max((a - b).abs());
        }
    }
    Outcome {
        pass: max_lambda < 0.9 && series_err < 1e-9 && trip_err < 1e-10,
        detail: format!(
            "max lambda {max_lambda:.3}; series err {series_err:.2e} (tol 1e-9); round trip {trip_err:.2e} (tol 1e-10)"
        ),
    }
}

fn decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let m = subcritical_network(seed);
        let r = psi_full(&m, 200).unwrap();
        let direct = common::naive_psi(m.alpha(), &m.banks().equity_shares(), 200);
        worst = worst.max((1.0 + r.psi_1 + r.psi_2 + r.psi_3 + r.psi_res - direct).abs());
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!("max residual {worst:.2e} over 100 networks (tol 1e-12)"),
    }
}

fn metropolis() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = 10_000;
    let mut worst_z: f64 = 0.0;
    for (beta, delta) in [(1.0f64, -0.7f64), (1e6, -1e-6), (50.0, -0.01), (2.0, -2.0)] {
        let p = (beta * delta).exp();
        let hits = (0..trials).filter(|_| metropolis_accept(delta, beta, &mut rng)).count();
        let freq = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        worst_z = worst_z.max((freq - p).abs() / sigma);
    }
    Outcome {
        pass: worst_z <= 3.0,
        detail: format!("worst deviation {worst_z:.2} sigma over 4 (beta, dF) pairs (tol 3)"),
    }
}

struct ChainSummary {
    psi: f64,
    lambda: f64,
    r: f64,
    reciprocal: usize,
}

fn run_chain(bs: &Arc<BankSet>, cfg: &AnnealConfig) -> ChainSummary {
    let out = anneal(Arc::clone(bs), cfg, None).unwrap();
    ChainSummary {
        psi: out.report.psi_total,
        lambda: out.report.lambda,
        r: metrics::leverage_assortativity(&out.matrix, metrics::DEFAULT_BINS),
        reciprocal: metrics::reciprocal_pairs(&out.matrix),
    }
}

fn illustrative() -> Outcome {
    let sweeps = 5000;
    let rows: Vec<(u64, ChainSummary, ChainSummary)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let bs = Arc::new(generate_population(&PopulationSpec::illustrative(30, seed)).unwrap());
            let lo = run_chain(&bs, &AnnealConfig::illustrative(Direction::Minimize, sweeps, seed));
            let hi = run_chain(&bs, &AnnealConfig::illustrative(Direction::Maximize, sweeps, seed));
            (seed, lo, hi)
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, lo, hi) in &rows {
        let ok = hi.psi > lo.psi
            && lo.r < -0.3
            && hi.r > 0.3
            && (0.55..=0.80).contains(&lo.lambda)
            && (0.70..=0.95).contains(&hi.lambda)
            && lo.reciprocal == 0;
        pass &= ok;
        parts.push(format!(
            "seed {seed}{}: Psi {:.3}/{:.3} r {:+.2}/{:+.2} lambda {:.3}/{:.3} recip {}",
            if ok { "" } else { " (out of band)" },
            lo.psi,
            hi.psi,
            lo.r,
            hi.r,
            lo.lambda,
            hi.lambda,
            lo.reciprocal
        ));
    }
    Outcome {
        pass,
        detail: format!("min/max per seed, {sweeps} sweeps: {}", parts.join("; ")),
    }
}

fn finite_size() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scaling(&ScalingConfig {
        sizes: vec![10, 20, 30, 40],
        rescale: 1.0,
        anneal: AnnealConfig::scaling(Direction::Minimize, 5000, 1),
        out_dir: dir.path().to_path_buf(),
    })
    .unwrap();
    let psi: Vec<f64> = out.points.iter().map(|p| p.psi).collect();
    let decreasing = psi.windows(2).all(|w| w[1] < w[0]);
    let last = psi[3];
    Outcome {
        pass: decreasing && (2.09..=2.25).contains(&last),
        detail: format!(
            "Psi_min(N=10,20,30,40) = {} (decreasing: {decreasing}); Psi(40) in [2.09, 2.25]",
            psi.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn supercritical() -> Outcome {
    let bs = Arc::new(generate_population(&PopulationSpec::grid(30, 2.0)).unwrap());
    let mut cfgs = [Direction::Minimize, Direction::Maximize]
        .map(|d| AnnealConfig::scaling(d, 5000, 9));
    for c in &mut cfgs {
        c.trial_terms = debtrank::amplification::presets::SUPERCRITICAL_TRIAL;
    }
    let lo = run_chain(&bs, &cfgs[0]);
    let hi = run_chain(&bs, &cfgs[1]);
    Outcome {
        pass: hi.lambda > 1.0 && lo.lambda.is_finite() && lo.r < -0.3 && hi.r > 0.3,
        detail: format!(
            "lambda min {:.3} / max {:.3}; r min {:+.2} / max {:+.2}",
            lo.lambda, hi.lambda, lo.r, hi.r
        ),
    }
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let name = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        if !name.rsplit('/').next().unwrap().starts_with("timing_") {
            out.push((name, fs::read(&entry).unwrap()));
        }
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    let Ok(entries) = fs::read_dir(dir) else {
        return files;
    };
    for e in entries {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let nodes = root.path().join("net/nodes.csv");
    let edges = root.path().join("net/edges.csv");
    let run = |args: &[&str], out: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_debtrank"));
        cmd.args(args).args(["--seed", "11"]);
        if let Some(o) = out {
            cmd.arg("--out-dir").arg(o);
        }
        let res = cmd.output().unwrap();
        assert!(res.status.success(), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        res.stdout
    };
    run(&["generate", "--n", "12"], Some(&root.path().join("net")));
    let (n, e) = (nodes.to_str().unwrap(), edges.to_str().unwrap());
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("generate", vec!["generate", "--kind", "pareto", "--n", "10"]),
        ("propagate", vec!["propagate", "--nodes", n, "--edges", e, "--inverse-samples", "500"]),
        ("psi", vec!["psi", "--nodes", n, "--edges", e, "--equity-samples", "5"]),
        ("optimize", vec!["optimize", "--nodes", n, "--edges", e, "--sweeps", "60"]),
        ("metrics", vec!["metrics", "--nodes", n, "--edges", e]),
        ("analytic", vec!["analytic", "two-type", "--n1", "5", "--n2", "50", "--c1", "2", "--c2", "0.5", "--kappa-grid", "5"]),
        ("scaling", vec!["scaling", "--sizes", "6,8,10", "--sweeps", "40"]),
    ];
    let mut bad = Vec::new();
    for (name, args) in &commands {
        let dirs = [root.path().join(format!("{name}_a")), root.path().join(format!("{name}_b"))];
        let s1 = run(args, Some(&dirs[0]));
        let s2 = run(args, Some(&dirs[1]));
        let same_files = artifacts(&dirs[0]) == artifacts(&dirs[1]);
        // stdout may echo the output directory
        let a = String::from_utf8_lossy(&s1).replace(dirs[0].to_str().unwrap(), "OUT");
        let b = String::from_utf8_lossy(&s2).replace(dirs[1].to_str().unwrap(), "OUT");
        if !same_files || a != b || artifacts(&dirs[0]).is_empty() {
            bad.push(*name);
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} subcommands rerun with identical files and stdout", commands.len())
        } else {
            format!("differences in {bad:?}")
        },
    }
}

fn main() -> ExitCode {
    let results = [
        check(1, "constant-leverage invariance", Some(5.0), constant_leverage),
        check(2, "two-type lambda closed form", Some(1.0), two_type_lambda),
        check(3, "kappa monotonicity", Some(30.0), kappa_monotonicity),
        check(4, "series/solve consistency", Some(10.0), series_vs_solve),
        check(5, "decomposition identity", None, decomposition),
        check(6, "Metropolis statistics", None, metropolis),
        check(7, "illustrative example", Some(3000.0), illustrative),
        check(8, "finite-size trend", None, finite_size),
        check(9, "supercritical regime", None, supercritical),
        check(10, "determinism", None, determinism),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
