//! Metropolis search over exposure matrices with fixed margins.
//!
//! The chain state is always a feasible matrix. Proposals are four-cell
//! moves `D(i1, j1, i2, j2)` that add `d` on `(i1, j1)` and `(i2, j2)` and
//! remove it from the donor cells `(i1, j2)` and `(i2, j1)`, so every row
//! and column sum is unchanged. The objective is
//!
//! `F = +-Psi - beta_k * k - beta_asym * sum_ij alpha_ij alpha_ji / sum_ij alpha_ij^2`
//!
//! and a move is accepted with probability `min(1, exp(beta * dF))`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amplification::{self, psi_truncated, PsiReport, SeriesWorkspace};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{BankSet, ExposureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Minimize => -1.0,
            Direction::Maximize => 1.0,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimize" | "min" => Ok(Self::Minimize),
            "maximize" | "max" => Ok(Self::Maximize),
            other => Err(Error::InvalidConfig(format!("unknown direction '{other}'"))),
        }
    }
}

/// Inverse temperature as a function of the sweep index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant { value: f64 },
    /// `beta(n) = prefactor * N^2 * growth^(n / n_max)`
    Geometric { prefactor: f64, growth: f64 },
}

impl BetaSchedule {
    /// The increasing schedule used for the finite-size runs.
    pub fn standard_geometric() -> Self {
        BetaSchedule::Geometric {
            prefactor: 10.0,
            growth: 100.0,
        }
    }

    /// `sweep` runs from 1 to `sweeps`.
    pub fn beta(&self, sweep: usize, sweeps: usize, n_banks: usize) -> f64 {
        match *self {
            BetaSchedule::Constant { value } => value,
            BetaSchedule::Geometric { prefactor, growth } => {
                let n2 = (n_banks * n_banks) as f64;
                prefactor * n2 * growth.powf(sweep as f64 / sweeps as f64)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaSchedule::Constant { value } => value > 0.0 && value.is_finite(),
            BetaSchedule::Geometric { prefactor, growth } => {
                prefactor > 0.0 && growth > 0.0 && prefactor.is_finite() && growth.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid beta schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    pub direction: Direction,
    pub beta: BetaSchedule,
    #[serde(default)]
    pub beta_k: f64,
    #[serde(default)]
    pub beta_asym: f64,
    pub sweeps: usize,
    pub trial_terms: usize,
    pub final_terms: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_full_transfer")]
    pub full_transfer_prob: f64,
    /// Sweeps between exact re-projections onto the margins.
    #[serde(default = "default_renormalize")]
    pub renormalize_every: usize,
    /// Bins for the traced leverage assortativity.
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

fn default_full_transfer() -> f64 {
    0.5
}

fn default_renormalize() -> usize {
    100
}

fn default_bins() -> usize {
    metrics::DEFAULT_BINS
}

impl AnnealConfig {
    /// Constant `beta = 1e6`, `beta_k = 0.1`, `beta_asym = 2`, 50/200 terms.
    pub fn illustrative(direction: Direction, sweeps: usize, rng_seed: u64) -> Self {
        Self {
            direction,
            beta: BetaSchedule::Constant { value: 1e6 },
            beta_k: 0.1,
            beta_asym: 2.0,
            sweeps,
            trial_terms: amplification::presets::ILLUSTRATIVE_TRIAL,
            final_terms: amplification::presets::ILLUSTRATIVE_FINAL,
            rng_seed,
            full_transfer_prob: default_full_transfer(),
            renormalize_every: default_renormalize(),
            n_bins: default_bins(),
        }
    }

    /// Geometric schedule with 13/103 terms and the sparsity/asymmetry penalties.
    pub fn scaling(direction: Direction, sweeps: usize, rng_seed: u64) -> Self {
        Self {
            beta: BetaSchedule::standard_geometric(),
            trial_terms: amplification::presets::GRID_TRIAL,
            final_terms: amplification::presets::GRID_FINAL,
            ..Self::illustrative(direction, sweeps, rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.beta.validate()?;
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sweeps == 0 {
            return fail("sweeps must be positive".into());
        }
        if self.trial_terms == 0 || self.trial_terms > self.final_terms {
            return fail(format!(
                "need 0 < trial_terms <= final_terms, got {} and {}",
                self.trial_terms, self.final_terms
            ));
        }
        if self.final_terms < 4 {
            return fail("final_terms must be at least 4".into());
        }
        if !(0.0..=1.0).contains(&self.full_transfer_prob) {
            return fail("full_transfer_prob must lie in [0, 1]".into());
        }
        if !(self.beta_k >= 0.0 && self.beta_asym >= 0.0) {
            return fail("penalty weights must be non-negative".into());
        }
        if self.n_bins < 2 {
            return fail("n_bins must be at least 2".into());
        }
        Ok(())
    }
}

/// Per-sweep observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    pub psi: f64,
    pub lambda: f64,
    pub assortativity: f64,
    pub mean_degree: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnealTrace {
    pub records: Vec<TraceRecord>,
}

/// A proposed four-cell move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DMove {
    pub i1: usize,
    pub j1: usize,
    pub i2: usize,
    pub j2: usize,
    pub d: f64,
    /// `d` equals the smaller donor, which is emptied exactly.
    pub full_transfer: bool,
}

impl DMove {
    /// The four cells with the sign of the change: receivers first.
    pub fn cells(&self) -> [(usize, usize, f64); 4] {
        [
            (self.i1, self.j1, 1.0),
            (self.i2, self.j2, 1.0),
            (self.i1, self.j2, -1.0),
            (self.i2, self.j1, -1.0),
        ]
    }
}

/// Applies `alpha + D`, emptying a donor exactly on full transfer and
/// snapping residues below `eps` to zero.
pub fn apply_d_move(alpha: &mut DMatrix<f64>, mv: &DMove, eps: f64) {
    for (i, j, v) in mv.new_values(alpha, eps) {
        alpha[(i, j)] = v;
    }
}

impl DMove {
    fn new_values(&self, alpha: &DMatrix<f64>, eps: f64) -> [(usize, usize, f64); 4] {
        let d1 = alpha[(self.i1, self.j2)];
        let d2 = alpha[(self.i2, self.j1)];
        let donor = |old: f64| {
            let v = if self.full_transfer && old == self.d {
                0.0
            } else {
                old - self.d
            };
            if v < eps {
                0.0
            } else {
                v
            }
        };
        [
            (self.i1, self.j1, alpha[(self.i1, self.j1)] + self.d),
            (self.i2, self.j2, alpha[(self.i2, self.j2)] + self.d),
            (self.i1, self.j2, donor(d1)),
            (self.i2, self.j1, donor(d2)),
        ]
    }
}

fn draw_quadruple<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize, usize, usize) {
    let i1 = rng.random_range(0..n);
    let mut i2 = rng.random_range(0..n);
    while i2 == i1 {
        i2 = rng.random_range(0..n);
    }
    let mut j1 = rng.random_range(0..n);
    while j1 == i1 || j1 == i2 {
        j1 = rng.random_range(0..n);
    }
    let mut j2 = rng.random_range(0..n);
    while j2 == i1 || j2 == i2 || j2 == j1 {
        j2 = rng.random_range(0..n);
    }
    (i1, j1, i2, j2)
}

/// Draws a move with all four cells off the diagonal, which needs four
/// distinct indices. Returns `Ok(None)` for a null proposal (a donor cell
/// is empty).
pub fn propose_d_move<R: Rng + ?Sized>(
    m: &ExposureMatrix,
    full_transfer_prob: f64,
    rng: &mut R,
) -> Result<Option<DMove>> {
    if m.n() < 4 {
        return Err(Error::InvalidModel(format!(
            "off-diagonal moves need at least 4 banks, got {}",
            m.n()
        )));
    }
    Ok(draw_move(
        m.alpha(),
        m.banks().zero_threshold(),
        full_transfer_prob,
        rng,
    ))
}

fn draw_move<R: Rng + ?Sized>(
    alpha: &DMatrix<f64>,
    eps: f64,
    full_transfer_prob: f64,
    rng: &mut R,
) -> Option<DMove> {
    let (i1, j1, i2, j2) = draw_quadruple(alpha.nrows(), rng);
    let max_d = alpha[(i1, j2)].min(alpha[(i2, j1)]);
    if max_d <= eps {
        return None;
    }
    let full_transfer = rng.random::<f64>() < full_transfer_prob;
    let d = if full_transfer {
        max_d
    } else {
        rng.random::<f64>() * max_d
    };
    Some(DMove {
        i1,
        j1,
        i2,
        j2,
        d,
        full_transfer,
    })
}

impl ExposureMatrix {
    /// Copy with the move applied.
    pub fn apply_move(&self, mv: &DMove) -> ExposureMatrix {
        let mut out = self.clone();
        let eps = self.banks().zero_threshold();
        apply_d_move(out.alpha_mut(), mv, eps);
        out
    }
}

/// `min(1, exp(beta * delta_f))`; ties are accepted.
pub fn metropolis_accept<R: Rng + ?Sized>(delta_f: f64, beta: f64, rng: &mut R) -> bool {
    if delta_f >= 0.0 {
        return true;
    }
    rng.random::<f64>() < (beta * delta_f).exp()
}

/// `F` with `Psi` summed to `cfg.trial_terms`.
pub fn objective(m: &ExposureMatrix, cfg: &AnnealConfig) -> f64 {
    let lm = m.lambda();
    let mut ws = SeriesWorkspace::new(m.n());
    let psi = psi_truncated(lm.matrix(), lm.weights(), cfg.trial_terms, &mut ws);
    cfg.direction.sign() * psi
        - cfg.beta_k * metrics::mean_degree(m)
        - cfg.beta_asym * metrics::symmetry_ratio(m)
}

/// Moves used to clear the diagonal of the proportional fill.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EliminationLog {
    /// `D(i1, i1, i2, i2)` moves between two diagonal entries.
    pub paired_moves: usize,
    /// `D(i1, i1, i2, j2)` moves clearing the last diagonal entry.
    pub final_moves: usize,
}

pub fn initial_feasible_matrix(bs: Arc<BankSet>) -> Result<ExposureMatrix> {
    initial_feasible_matrix_logged(bs).map(|(m, _)| m)
}

/// Proportional fill `a_i l_j / sum_k a_k`, then diagonal elimination:
/// the two largest diagonal entries are paired off until one remains, and
/// the last one is pushed onto the largest eligible off-diagonal entry.
pub fn initial_feasible_matrix_logged(
    bs: Arc<BankSet>,
) -> Result<(ExposureMatrix, EliminationLog)> {
    let n = bs.len();
    let a = bs.asset_shares();
    let l = bs.liability_shares();
    let total: f64 = a.iter().sum();
    let eps = bs.zero_threshold();
    let mut log = EliminationLog::default();
    if total == 0.0 {
        return Ok((ExposureMatrix::zeros(bs), log));
    }
    let mut alpha = DMatrix::from_fn(n, n, |i, j| a[i] * l[j] / total);
    let snap = |x: f64| if x < eps { 0.0 } else { x };

    loop {
        let mut diag: Vec<usize> = (0..n).filter(|&i| alpha[(i, i)] > 0.0).collect();
        match diag.len() {
            0 => break,
            1 => {
                let i1 = diag[0];
                // bounded: every partial move empties an off-diagonal entry
                for _ in 0..n * n {
                    let mut best: Option<(usize, usize)> = None;
                    for i2 in (0..n).filter(|&i| i != i1) {
                        for j2 in (0..n).filter(|&j| j != i1 && j != i2) {
                            if alpha[(i2, j2)] > 0.0
                                && best.is_none_or(|(bi, bj)| alpha[(i2, j2)] > alpha[(bi, bj)])
                            {
                                best = Some((i2, j2));
                            }
                        }
                    }
                    let Some((i2, j2)) = best else {
                        return Err(Error::InfeasibleMargins(format!(
                            "no off-diagonal entry can absorb the diagonal mass of bank {i1}"
                        )));
                    };
                    let diag_mass = alpha[(i1, i1)];
                    let d = diag_mass.min(alpha[(i2, j2)]);
                    alpha[(i1, i1)] = if d == diag_mass { 0.0 } else { snap(diag_mass - d) };
                    alpha[(i2, j2)] = if d == diag_mass { snap(alpha[(i2, j2)] - d) } else { 0.0 };
                    alpha[(i1, j2)] += d;
                    alpha[(i2, i1)] += d;
                    log.final_moves += 1;
                    if alpha[(i1, i1)] == 0.0 {
                        break;
                    }
                }
                if alpha[(i1, i1)] > 0.0 {
                    return Err(Error::InfeasibleMargins(format!(
                        "diagonal entry of bank {i1} could not be eliminated"
                    )));
                }
            }
            _ => {
                diag.sort_by(|&x, &y| alpha[(y, y)].total_cmp(&alpha[(x, x)]).then(x.cmp(&y)));
                let (i1, i2) = (diag[0], diag[1]);
                let (x1, x2) = (alpha[(i1, i1)], alpha[(i2, i2)]);
                let d = x2; // x1 >= x2
                alpha[(i1, i1)] = if x1 == x2 { 0.0 } else { snap(x1 - d) };
                alpha[(i2, i2)] = 0.0;
                alpha[(i1, i2)] += d;
                alpha[(i2, i1)] += d;
                log.paired_moves += 1;
            }
        }
    }
    let m = ExposureMatrix::from_alpha(bs, alpha)?;
    let report = m.validate();
    if !report.is_empty() {
        return Err(Error::InfeasibleMargins(format!(
            "diagonal elimination left violations: {report}"
        )));
    }
    Ok((m, log))
}

/// Iterative proportional fitting restricted to the current support:
/// alternately rescales rows to `a` and columns to `l`. Zero entries stay
/// zero, so the diagonal is untouched.
pub fn renormalize_support(alpha: &mut DMatrix<f64>, a: &[f64], l: &[f64], passes: usize) {
    let n = alpha.nrows();
    for _ in 0..passes {
        for i in 0..n {
            let s: f64 = alpha.row(i).sum();
            if s > 0.0 {
                let f = a[i] / s;
                alpha.row_mut(i).iter_mut().for_each(|x| *x *= f);
            }
        }
        for j in 0..n {
            let s: f64 = alpha.column(j).sum();
            if s > 0.0 {
                let f = l[j] / s;
                alpha.column_mut(j).iter_mut().for_each(|x| *x *= f);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    pub matrix: ExposureMatrix,
    pub trace: AnnealTrace,
    pub report: PsiReport,
    pub accepted_moves: u64,
    pub null_proposals: u64,
}

/// Mutable state of one chain.
struct Chain {
    alpha: DMatrix<f64>,
    lambda: DMatrix<f64>,
    weights: Vec<f64>,
    eps: f64,
    edges: usize,
    cross: f64,
    squares: f64,
    psi: f64,
    ws: SeriesWorkspace,
}

impl Chain {
    fn new(m: &ExposureMatrix) -> Self {
        let weights = m.banks().equity_shares();
        let n = m.n();
        let mut chain = Self {
            alpha: m.alpha().clone(),
            lambda: DMatrix::zeros(n, n),
            weights,
            eps: m.banks().zero_threshold(),
            edges: 0,
            cross: 0.0,
            squares: 0.0,
            psi: 0.0,
            ws: SeriesWorkspace::new(n),
        };
        chain.rebuild_lambda();
        chain
    }

    fn n(&self) -> usize {
        self.alpha.nrows()
    }

    fn rebuild_lambda(&mut self) {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                self.lambda[(i, j)] = self.alpha[(i, j)] / self.weights[i];
            }
        }
    }

    /// Recomputes every cached quantity from `alpha`.
    fn resync(&mut self, trial_terms: usize) {
        let n = self.n();
        self.edges = self.alpha.iter().filter(|&&x| x > 0.0).count();
        self.squares = self.alpha.iter().map(|x| x * x).sum();
        let mut cross = 0.0;
        for i in 0..n {
            for j in 0..n {
                cross += self.alpha[(i, j)] * self.alpha[(j, i)];
            }
        }
        self.cross = cross;
        self.psi = psi_truncated(&self.lambda, &self.weights, trial_terms, &mut self.ws);
    }

    fn objective(&self, cfg: &AnnealConfig, psi: f64, edges: usize, cross: f64, sq: f64) -> f64 {
        let ratio = if sq > 0.0 { cross / sq } else { 0.0 };
        cfg.direction.sign() * psi
            - cfg.beta_k * edges as f64 / self.n() as f64
            - cfg.beta_asym * ratio
    }

    fn current_objective(&self, cfg: &AnnealConfig) -> f64 {
        self.objective(cfg, self.psi, self.edges, self.cross, self.squares)
    }

    /// One Metropolis trial; returns whether a move was accepted and
    /// whether the proposal was null.
    fn trial<R: Rng + ?Sized>(&mut self, cfg: &AnnealConfig, beta: f64, rng: &mut R) -> (bool, bool) {
        let Some(mv) = draw_move(&self.alpha, self.eps, cfg.full_transfer_prob, rng) else {
            return (false, true);
        };
        let updates = mv.new_values(&self.alpha, self.eps);

        let mut edges = self.edges as isize;
        let (mut cross, mut sq) = (self.cross, self.squares);
        // all four indices are distinct, so no transpose of a touched cell is touched
        for &(i, j, new) in &updates {
            let old = self.alpha[(i, j)];
            edges += (new > 0.0) as isize - (old > 0.0) as isize;
            sq += new * new - old * old;
            cross += 2.0 * (new - old) * self.alpha[(j, i)];
        }
        let saved: [f64; 4] = updates.map(|(i, j, _)| self.lambda[(i, j)]);
        for &(i, j, new) in &updates {
            self.lambda[(i, j)] = new / self.weights[i];
        }
        let psi = psi_truncated(&self.lambda, &self.weights, cfg.trial_terms, &mut self.ws);
        let f_new = self.objective(cfg, psi, edges as usize, cross, sq);
        let delta = f_new - self.current_objective(cfg);

        if metropolis_accept(delta, beta, rng) {
            for &(i, j, new) in &updates {
                self.alpha[(i, j)] = new;
            }
            self.edges = edges as usize;
            self.cross = cross;
            self.squares = sq;
            self.psi = psi;
            (true, false)
        } else {
            for (k, &(i, j, _)) in updates.iter().enumerate() {
                self.lambda[(i, j)] = saved[k];
            }
            (false, false)
        }
    }
}

/// Runs `cfg.sweeps` sweeps of `N^2` trials from `initial` (or the
/// proportional-fill start) and reports the final matrix at `final_terms`.
pub fn anneal(
    bs: Arc<BankSet>,
    cfg: &AnnealConfig,
    initial: Option<ExposureMatrix>,
) -> Result<AnnealOutcome> {
    anneal_with_observer(bs, cfg, initial, |_| {})
}

/// As [`anneal`], calling `observer` with each trace record as it is produced.
pub fn anneal_with_observer<F: FnMut(&TraceRecord)>(
    bs: Arc<BankSet>,
    cfg: &AnnealConfig,
    initial: Option<ExposureMatrix>,
    mut observer: F,
) -> Result<AnnealOutcome> {
    cfg.validate()?;
    let start = match initial {
        Some(m) => {
            if !Arc::ptr_eq(m.banks(), &bs) && **m.banks() != *bs {
                return Err(Error::InvalidConfig(
                    "initial matrix belongs to a different bank set".into(),
                ));
            }
            m.ensure_feasible()?;
            m
        }
        None => initial_feasible_matrix(Arc::clone(&bs))?,
    };
    let n = start.n();
    if n < 4 {
        return Err(Error::InvalidModel(format!(
            "off-diagonal moves need at least 4 banks, got {n}"
        )));
    }
    let a = bs.asset_shares();
    let l = bs.liability_shares();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut chain = Chain::new(&start);
    chain.resync(cfg.trial_terms);

    let trials = n * n;
    let mut trace = AnnealTrace {
        records: Vec::with_capacity(cfg.sweeps),
    };
    let mut accepted_total = 0u64;
    let mut null_total = 0u64;

    for sweep in 1..=cfg.sweeps {
        let beta = cfg.beta.beta(sweep, cfg.sweeps, n);
        let mut accepted = 0usize;
        for _ in 0..trials {
            let (acc, null) = chain.trial(cfg, beta, &mut rng);
            accepted += acc as usize;
            null_total += null as u64;
        }
        accepted_total += accepted as u64;

        if cfg.renormalize_every > 0 && sweep % cfg.renormalize_every == 0 {
            renormalize_support(&mut chain.alpha, &a, &l, 2);
            chain.rebuild_lambda();
        }
        chain.resync(cfg.trial_terms);

        let current = ExposureMatrix::from_alpha(Arc::clone(&bs), chain.alpha.clone())?;
        let lm = current.lambda();
        let record = TraceRecord {
            n: sweep,
            psi: psi_truncated(lm.matrix(), lm.weights(), cfg.final_terms, &mut chain.ws),
            lambda: lm.spectral_radius(),
            assortativity: metrics::leverage_assortativity(&current, cfg.n_bins),
            mean_degree: chain.edges as f64 / n as f64,
            acceptance_rate: accepted as f64 / trials as f64,
        };
        observer(&record);
        trace.records.push(record);
    }

    let matrix = ExposureMatrix::from_alpha(bs, chain.alpha)?;
    let report = amplification::psi_full(&matrix, cfg.final_terms)?;
    Ok(AnnealOutcome {
        matrix,
        trace,
        report,
        accepted_moves: accepted_total,
        null_proposals: null_total,
    })
}
