//! The shock multiplier `Psi = H_inf / psi` for a uniform shock and its
//! split into node-local and network terms:
//!
//! `Psi = 1 + Psi1 + Psi2 + Psi3 + Psi_res`, where term `t` of the series is
//! `sum_ij e_i (Lambda^t)_ij`. The first two terms only depend on the bank
//! totals; `Psi3 = sum_ij alpha_ij R3_ij` is the lowest-order term that sees
//! the exposure matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BankSet, ExposureMatrix, LambdaMatrix};
use crate::propagation;

/// Term counts used in the reference experiments.
pub mod presets {
    pub const ILLUSTRATIVE_TRIAL: usize = 50;
    pub const ILLUSTRATIVE_FINAL: usize = 200;
    pub const GRID_TRIAL: usize = 13;
    pub const GRID_FINAL: usize = 103;
    pub const SUPERCRITICAL_TRIAL: usize = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiReport {
    pub psi_total: f64,
    pub psi_1: f64,
    pub psi_2: f64,
    pub psi_3: f64,
    pub psi_res: f64,
    pub terms_used: usize,
    pub lambda: f64,
    /// Geometric estimate of the neglected tail; `+inf` (JSON `null`) when
    /// the system is supercritical.
    pub truncation_bound: f64,
    pub supercritical: bool,
}

/// `(Psi1, Psi2)` from the bank totals alone.
pub fn psi_local_terms(bs: &BankSet) -> (f64, f64) {
    let total = bs.total_equity();
    let psi_1 = bs.assets().iter().sum::<f64>() / total;
    let psi_2 = bs
        .assets()
        .iter()
        .zip(bs.liabilities())
        .zip(bs.equity())
        .map(|((a, l), e)| a * l / e)
        .sum::<f64>()
        / total;
    (psi_1, psi_2)
}

/// `R3_ij = L_i A_j / (E_i E_j)` off the diagonal, zero on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    pub r3: DMatrix<f64>,
}

impl RiskMatrix {
    /// `Psi3 = sum_ij alpha_ij R3_ij`.
    pub fn psi_3(&self, m: &ExposureMatrix) -> f64 {
        self.r3.component_mul(m.alpha()).sum()
    }
}

pub fn risk_matrix(bs: &BankSet) -> RiskMatrix {
    let n = bs.len();
    let lev_l = bs.liability_leverage();
    let lev_a = bs.leverage();
    let r3 = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { lev_l[i] * lev_a[j] });
    RiskMatrix { r3 }
}

/// Reusable buffers for repeated truncated-series evaluation.
#[derive(Debug, Clone)]
pub(crate) struct SeriesWorkspace {
    u: DVector<f64>,
    next: DVector<f64>,
}

impl SeriesWorkspace {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            u: DVector::zeros(n),
            next: DVector::zeros(n),
        }
    }
}

/// `sum_{t < terms} e^T Lambda^t 1`, iterating the row vector `e^T Lambda^t`.
pub(crate) fn psi_truncated(
    lambda: &DMatrix<f64>,
    weights: &[f64],
    terms: usize,
    ws: &mut SeriesWorkspace,
) -> f64 {
    ws.u.copy_from_slice(weights);
    let mut total = 0.0;
    for t in 0..terms {
        total += ws.u.sum();
        if t + 1 < terms {
            lambda.tr_mul_to(&ws.u, &mut ws.next);
            std::mem::swap(&mut ws.u, &mut ws.next);
        }
    }
    total
}

/// Individual series terms `t = 0..terms`.
pub fn series_terms(lm: &LambdaMatrix, terms: usize) -> Vec<f64> {
    let mut u = DVector::from_column_slice(lm.weights());
    let mut next = DVector::zeros(lm.n());
    let mut out = Vec::with_capacity(terms);
    for t in 0..terms {
        out.push(u.sum());
        if t + 1 < terms {
            lm.matrix().tr_mul_to(&u, &mut next);
            std::mem::swap(&mut u, &mut next);
        }
    }
    out
}

/// Multiplier and decomposition from `t_terms` series terms (at least 4).
///
/// Supercritical systems still get a report: the truncated sum with
/// `supercritical` set and an infinite truncation bound.
pub fn psi_full(m: &ExposureMatrix, t_terms: usize) -> Result<PsiReport> {
    psi_from_lambda(&m.lambda(), t_terms)
}

pub fn psi_from_lambda(lm: &LambdaMatrix, t_terms: usize) -> Result<PsiReport> {
    if t_terms < 4 {
        return Err(Error::InvalidConfig(format!(
            "need at least 4 series terms for the decomposition, got {t_terms}"
        )));
    }
    let terms = series_terms(lm, t_terms);
    let lambda = lm.spectral_radius();
    let psi_res: f64 = terms[4..].iter().sum();
    let psi_total: f64 = terms.iter().sum();
    let supercritical = lambda >= 1.0;
    let truncation_bound = if supercritical {
        f64::INFINITY
    } else {
        terms[t_terms - 1] * lambda / (1.0 - lambda)
    };
    Ok(PsiReport {
        psi_total,
        psi_1: terms[1],
        psi_2: terms[2],
        psi_3: terms[3],
        psi_res,
        terms_used: t_terms,
        lambda,
        truncation_bound,
        supercritical,
    })
}

/// Exact total loss for a general shock next to its second-order expansion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HInfinity {
    pub exact: f64,
    /// `sum e_i h_i + sum l_i h_i + sum_jl l_j alpha_jl h_l / e_j`
    pub expansion: f64,
    /// `exact - expansion`, the third- and higher-order remainder.
    pub gap: f64,
}

pub fn h_infinity_general(m: &ExposureMatrix, h1: &[f64]) -> Result<HInfinity> {
    let lm = m.lambda();
    let h_inf = propagation::h_infinity_exact(&lm, h1)?;
    let e = lm.weights();
    let exact = e.iter().zip(&h_inf).map(|(e, h)| e * h).sum();

    let l = m.banks().liability_shares();
    let zeroth: f64 = e.iter().zip(h1).map(|(e, h)| e * h).sum();
    let first: f64 = l.iter().zip(h1).map(|(l, h)| l * h).sum();
    let alpha = m.alpha();
    let mut second = 0.0;
    for j in 0..m.n() {
        let row: f64 = (0..m.n()).map(|k| alpha[(j, k)] * h1[k]).sum();
        second += l[j] / e[j] * row;
    }
    let expansion = zeroth + first + second;
    Ok(HInfinity {
        exact,
        expansion,
        gap: exact - expansion,
    })
}
