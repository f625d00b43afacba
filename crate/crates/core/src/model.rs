//! Balance sheets, exposure matrices and the leverage matrix.
//!
//! Everything past the I/O boundary is dimensionless: exposures, assets,
//! liabilities and equities are divided by the total system equity.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance on the market-closure and margin constraints.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

/// Entries below `ZERO_SNAP_FACTOR * max(a_i)` are treated as exact zeros.
pub const ZERO_SNAP_FACTOR: f64 = 1e-12;

/// Per-bank balance sheet totals in currency units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankSet {
    equity: Vec<f64>,
    assets: Vec<f64>,
    liabilities: Vec<f64>,
    #[serde(skip)]
    total_equity: f64,
}

impl BankSet {
    pub fn new(equity: Vec<f64>, assets: Vec<f64>, liabilities: Vec<f64>) -> Result<Self> {
        let n = equity.len();
        if assets.len() != n || liabilities.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "equity has {} entries, assets {}, liabilities {}",
                n,
                assets.len(),
                liabilities.len()
            )));
        }
        if n < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least two banks, got {n}"
            )));
        }
        for (index, &value) in equity.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveEquity { index, value });
            }
        }
        for (field, values) in [("assets", &assets), ("liabilities", &liabilities)] {
            for (index, &value) in values.iter().enumerate() {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::NegativeBalance {
                        index,
                        field,
                        value,
                    });
                }
            }
        }
        let total_assets: f64 = assets.iter().sum();
        let total_liabilities: f64 = liabilities.iter().sum();
        let scale = total_assets.max(total_liabilities);
        if (total_assets - total_liabilities).abs() > MARGIN_TOLERANCE * scale {
            return Err(Error::MarketImbalance {
                assets: total_assets,
                liabilities: total_liabilities,
            });
        }
        let total_equity = equity.iter().sum();
        Ok(Self {
            equity,
            assets,
            liabilities,
            total_equity,
        })
    }

    pub fn len(&self) -> usize {
        self.equity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equity.is_empty()
    }

    pub fn equity(&self) -> &[f64] {
        &self.equity
    }

    pub fn assets(&self) -> &[f64] {
        &self.assets
    }

    pub fn liabilities(&self) -> &[f64] {
        &self.liabilities
    }

    pub fn total_equity(&self) -> f64 {
        self.total_equity
    }

    /// `e_i = E_i / sum_k E_k`
    pub fn equity_shares(&self) -> Vec<f64> {
        self.scaled(&self.equity)
    }

    /// `a_i = A_i / sum_k E_k`
    pub fn asset_shares(&self) -> Vec<f64> {
        self.scaled(&self.assets)
    }

    /// `l_i = L_i / sum_k E_k`
    pub fn liability_shares(&self) -> Vec<f64> {
        self.scaled(&self.liabilities)
    }

    fn scaled(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v / self.total_equity).collect()
    }

    /// Interbank leverage `A_i / E_i`.
    pub fn leverage(&self) -> Vec<f64> {
        self.assets
            .iter()
            .zip(&self.equity)
            .map(|(a, e)| a / e)
            .collect()
    }

    /// `L_i / E_i`.
    pub fn liability_leverage(&self) -> Vec<f64> {
        self.liabilities
            .iter()
            .zip(&self.equity)
            .map(|(l, e)| l / e)
            .collect()
    }

    /// Snap threshold for exposure entries, in dimensionless units.
    pub fn zero_threshold(&self) -> f64 {
        let max_a = self.assets.iter().cloned().fold(0.0, f64::max) / self.total_equity;
        ZERO_SNAP_FACTOR * max_a
    }
}

/// One violated feasibility constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Diagonal {
        index: usize,
        value: f64,
    },
    Negative {
        row: usize,
        col: usize,
        value: f64,
    },
    RowSum {
        index: usize,
        expected: f64,
        actual: f64,
    },
    ColumnSum {
        index: usize,
        expected: f64,
        actual: f64,
    },
}

impl Violation {
    /// Size of the violation in dimensionless units.
    pub fn residual(&self) -> f64 {
        match *self {
            Violation::Diagonal { value, .. } => value.abs(),
            Violation::Negative { value, .. } => -value,
            Violation::RowSum {
                expected, actual, ..
            }
            | Violation::ColumnSum {
                expected, actual, ..
            } => (actual - expected).abs(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// Largest residual among violations matching `pred`, or 0.
    pub fn worst<F: Fn(&Violation) -> bool>(&self, pred: F) -> f64 {
        self.violations
            .iter()
            .filter(|v| pred(v))
            .map(Violation::residual)
            .fold(0.0, f64::max)
    }

    pub fn worst_diagonal(&self) -> f64 {
        self.worst(|v| matches!(v, Violation::Diagonal { .. }))
    }

    pub fn worst_negative(&self) -> f64 {
        self.worst(|v| matches!(v, Violation::Negative { .. }))
    }

    pub fn worst_row_sum(&self) -> f64 {
        self.worst(|v| matches!(v, Violation::RowSum { .. }))
    }

    pub fn worst_column_sum(&self) -> f64 {
        self.worst(|v| matches!(v, Violation::ColumnSum { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "no violations");
        }
        write!(
            f,
            "{} violations (worst diagonal {:e}, negative {:e}, row sum {:e}, column sum {:e})",
            self.violations.len(),
            self.worst_diagonal(),
            self.worst_negative(),
            self.worst_row_sum(),
            self.worst_column_sum()
        )
    }
}

/// Dimensionless interbank exposures `alpha_ij = A_ij / sum_k E_k`, bound to
/// the bank set whose margins they must reproduce.
#[derive(Debug, Clone)]
pub struct ExposureMatrix {
    banks: Arc<BankSet>,
    alpha: DMatrix<f64>,
}

impl ExposureMatrix {
    /// Wraps a dimensionless matrix. Only the shape and finiteness are
    /// checked here; use [`ExposureMatrix::validate`] for the constraints.
    pub fn from_alpha(banks: Arc<BankSet>, mut alpha: DMatrix<f64>) -> Result<Self> {
        let n = banks.len();
        if alpha.nrows() != n || alpha.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "exposure matrix is {}x{}, bank set has {} banks",
                alpha.nrows(),
                alpha.ncols(),
                n
            )));
        }
        if alpha.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch(
                "exposure matrix has non-finite entries".into(),
            ));
        }
        let eps = banks.zero_threshold();
        alpha.iter_mut().for_each(|x| {
            if x.abs() < eps {
                *x = 0.0;
            }
        });
        Ok(Self { banks, alpha })
    }

    /// Builds from currency amounts `A_ij`.
    pub fn from_currency(banks: Arc<BankSet>, amounts: DMatrix<f64>) -> Result<Self> {
        let total = banks.total_equity();
        Self::from_alpha(banks, amounts / total)
    }

    pub fn zeros(banks: Arc<BankSet>) -> Self {
        let n = banks.len();
        Self {
            banks,
            alpha: DMatrix::zeros(n, n),
        }
    }

    /// Like [`ExposureMatrix::from_alpha`] but fails unless every constraint holds.
    pub fn feasible(banks: Arc<BankSet>, alpha: DMatrix<f64>) -> Result<Self> {
        let m = Self::from_alpha(banks, alpha)?;
        m.ensure_feasible()?;
        Ok(m)
    }

    pub fn banks(&self) -> &Arc<BankSet> {
        &self.banks
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub(crate) fn alpha_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.alpha
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.alpha[(i, j)]
    }

    /// Copy with a replacement matrix on the same bank set.
    pub fn with_alpha(&self, alpha: DMatrix<f64>) -> Result<Self> {
        Self::from_alpha(Arc::clone(&self.banks), alpha)
    }

    pub fn to_currency(&self) -> DMatrix<f64> {
        &self.alpha * self.banks.total_equity()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.alpha.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.alpha.column_iter().map(|c| c.sum()).collect()
    }

    /// Lists every violated constraint: zero diagonal, non-negativity and
    /// the row/column margins `a_i`, `l_j`.
    pub fn validate(&self) -> ValidationReport {
        let n = self.n();
        let a = self.banks.asset_shares();
        let l = self.banks.liability_shares();
        let floor = self.banks.zero_threshold() * n as f64;
        let mut violations = Vec::new();

        for i in 0..n {
            let d = self.alpha[(i, i)];
            if d != 0.0 {
                violations.push(Violation::Diagonal { index: i, value: d });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.alpha[(i, j)];
                if v < 0.0 {
                    violations.push(Violation::Negative {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        let out_of_tolerance = |expected: f64, actual: f64| {
            let tol = MARGIN_TOLERANCE * expected.abs().max(actual.abs()) + floor;
            (actual - expected).abs() > tol
        };
        for (index, actual) in self.row_sums().into_iter().enumerate() {
            if out_of_tolerance(a[index], actual) {
                violations.push(Violation::RowSum {
                    index,
                    expected: a[index],
                    actual,
                });
            }
        }
        for (index, actual) in self.column_sums().into_iter().enumerate() {
            if out_of_tolerance(l[index], actual) {
                violations.push(Violation::ColumnSum {
                    index,
                    expected: l[index],
                    actual,
                });
            }
        }
        ValidationReport { violations }
    }

    pub fn ensure_feasible(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidExposures(report))
        }
    }

    pub fn lambda(&self) -> LambdaMatrix {
        LambdaMatrix::from_exposures(self)
    }
}

/// Result of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Stress propagation matrix `Lambda_ij = alpha_ij / e_i` together with
/// the equity weights `e_i` used to aggregate losses.
#[derive(Debug, Clone)]
pub struct LambdaMatrix {
    matrix: DMatrix<f64>,
    weights: Vec<f64>,
    radius: OnceLock<SpectralEstimate>,
}

impl LambdaMatrix {
    pub fn from_exposures(m: &ExposureMatrix) -> Self {
        let weights = m.banks().equity_shares();
        let mut matrix = m.alpha().clone();
        for (i, mut row) in matrix.row_iter_mut().enumerate() {
            row /= weights[i];
        }
        Self {
            matrix,
            weights,
            radius: OnceLock::new(),
        }
    }

    /// Builds from an explicit matrix and equity weights; the weights are
    /// normalized to sum to one. Entries must be finite and non-negative.
    pub fn from_parts(matrix: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} with {} weights",
                matrix.nrows(),
                matrix.ncols(),
                weights.len()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidModel(
                "leverage matrix entries must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidModel(
                "equity weights must be non-negative with positive sum".into(),
            ));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            matrix,
            weights,
            radius: OnceLock::new(),
        })
    }

    /// Equal equity weights `1/N`.
    pub fn with_uniform_weights(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::from_parts(matrix, vec![1.0 / n as f64; n])
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    /// Recovers `alpha_ij = Lambda_ij * e_i`.
    pub fn to_alpha(&self) -> DMatrix<f64> {
        let mut alpha = self.matrix.clone();
        for (i, mut row) in alpha.row_iter_mut().enumerate() {
            row *= self.weights[i];
        }
        alpha
    }

    pub fn spectral(&self) -> SpectralEstimate {
        *self.radius.get_or_init(|| spectral_radius(&self.matrix))
    }

    /// Largest eigenvalue modulus (Perron root).
    pub fn spectral_radius(&self) -> f64 {
        self.spectral().value
    }
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;
const STABLE_STEPS: usize = 3;
const OSCILLATION_STEPS: usize = 50;

/// Perron root of a non-negative matrix by power iteration.
///
/// Plain iteration from the all-ones vector first; if the estimate keeps
/// alternating (several eigenvalues on the spectral circle) the iteration
/// restarts on `M + s I` with `s` the current estimate.
pub fn spectral_radius(m: &DMatrix<f64>) -> SpectralEstimate {
    let n = m.nrows();
    if n == 0 || m.iter().all(|&x| x == 0.0) {
        return SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let plain = power_iterate(m, 0.0, POWER_MAX_ITER, true);
    if plain.converged || plain.iterations >= POWER_MAX_ITER {
        return plain;
    }
    let shift = if plain.value > 0.0 { plain.value } else { 1.0 };
    let budget = POWER_MAX_ITER - plain.iterations;
    let mut shifted = power_iterate(m, shift, budget, false);
    shifted.value = (shifted.value - shift).max(0.0);
    shifted.iterations += plain.iterations;
    shifted
}

fn power_iterate(
    m: &DMatrix<f64>,
    shift: f64,
    max_iter: usize,
    bail_on_oscillation: bool,
) -> SpectralEstimate {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut w = DVector::zeros(n);
    let mut prev = f64::NAN;
    let mut prev_delta = 0.0;
    let mut stable = 0;
    let mut alternating = 0;
    let mut estimate = 0.0;

    for it in 1..=max_iter {
        m.mul_to(&v, &mut w);
        if shift != 0.0 {
            w.axpy(shift, &v, 1.0);
        }
        let norm: f64 = w.iter().sum();
        if norm <= 0.0 {
            // nilpotent on the reachable subspace
            return SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        estimate = norm;

        // Collatz-Wielandt bracket, valid while v stays strictly positive.
        if v.iter().all(|&x| x > 0.0) {
            let (lo, hi) = v
                .iter()
                .zip(w.iter())
                .map(|(vi, wi)| wi / vi)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r), hi.max(r))
                });
            if hi - lo <= POWER_TOL * hi {
                return SpectralEstimate {
                    value: 0.5 * (lo + hi),
                    iterations: it,
                    converged: true,
                };
            }
        }

        let delta = estimate - prev;
        if delta.abs() <= POWER_TOL * estimate {
            stable += 1;
            if stable >= STABLE_STEPS {
                return SpectralEstimate {
                    value: estimate,
                    iterations: it,
                    converged: true,
                };
            }
        } else {
            stable = 0;
        }
        if delta * prev_delta < 0.0 {
            alternating += 1;
            if bail_on_oscillation && alternating >= OSCILLATION_STEPS {
                return SpectralEstimate {
                    value: estimate,
                    iterations: it,
                    converged: false,
                };
            }
        } else {
            alternating = 0;
        }
        prev_delta = if delta.is_nan() { 0.0 } else { delta };
        prev = estimate;
        w /= norm;
        std::mem::swap(&mut v, &mut w);
    }
    SpectralEstimate {
        value: estimate,
        iterations: max_iter,
        converged: false,
    }
}
