//! Closed-form reference models.
//!
//! The two-type model has `n1` banks with leverage `c1` and `n2` banks with
//! leverage `c2`, all with equal equity, and interpolates between the
//! maximally assortative block matrix `Lambda_a` (`kappa = 0`) and the
//! maximally disassortative one (`kappa = kappa_max`) via
//! `Lambda = Lambda_a + kappa * Delta`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amplification::series_terms;
use crate::error::{Error, Result};
use crate::model::{BankSet, ExposureMatrix, LambdaMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTypeModel {
    pub n1: usize,
    pub n2: usize,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    #[serde(default = "unit_equity")]
    pub equity: f64,
}

fn unit_equity() -> f64 {
    1.0
}

impl TwoTypeModel {
    pub fn new(n1: usize, n2: usize, c1: f64, c2: f64, kappa: f64) -> Result<Self> {
        let model = Self {
            n1,
            n2,
            c1,
            c2,
            kappa,
            equity: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// `min(c1 / n2, c2 / n1)`
    pub fn kappa_max(&self) -> f64 {
        (self.c1 / self.n2 as f64).min(self.c2 / self.n1 as f64)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        let m = Self { kappa, ..*self };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidModel("both bank types need members".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c2 <= self.c1) {
            return Err(Error::InvalidModel(format!(
                "need 0 < c2 <= c1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if !(self.equity > 0.0 && self.equity.is_finite()) {
            return Err(Error::InvalidModel("equity must be positive".into()));
        }
        let kappa_max = self.kappa_max();
        if !(self.kappa >= 0.0 && self.kappa <= kappa_max * (1.0 + 1e-12)) {
            return Err(Error::KappaOutOfRange {
                kappa: self.kappa,
                kappa_max,
            });
        }
        Ok(())
    }

    /// Bank totals: `A_i = L_i = c_type * E`.
    pub fn bank_set(&self) -> Result<BankSet> {
        let lev: Vec<f64> = std::iter::repeat_n(self.c1, self.n1)
            .chain(std::iter::repeat_n(self.c2, self.n2))
            .collect();
        let assets: Vec<f64> = lev.iter().map(|c| c * self.equity).collect();
        BankSet::new(vec![self.equity; self.n()], assets.clone(), assets)
    }
}

/// `Delta` with blocks `-n2/n1`, `1`, `1`, `-n1/n2`. Its columns sum to zero
/// and so do its rows.
pub fn delta_matrix(n1: usize, n2: usize) -> DMatrix<f64> {
    let (f1, f2) = (n1 as f64, n2 as f64);
    DMatrix::from_fn(n1 + n2, n1 + n2, |i, j| match (i < n1, j < n1) {
        (true, true) => -f2 / f1,
        (false, false) => -f1 / f2,
        _ => 1.0,
    })
}

/// Block matrix with self-links: `c1/n1 - kappa n2/n1`, `kappa`, `kappa`,
/// `c2/n2 - kappa n1/n2`. Rows sum to `c1` and `c2`.
pub fn two_type_matrix(model: &TwoTypeModel) -> Result<DMatrix<f64>> {
    model.validate()?;
    let (n1, n2) = (model.n1, model.n2);
    let (f1, f2) = (n1 as f64, n2 as f64);
    let k = model.kappa;
    // clamp rounding at kappa_max
    let b11 = (model.c1 / f1 - k * f2 / f1).max(0.0);
    let b22 = (model.c2 / f2 - k * f1 / f2).max(0.0);
    Ok(DMatrix::from_fn(n1 + n2, n1 + n2, |i, j| {
        match (i < n1, j < n1) {
            (true, true) => b11,
            (false, false) => b22,
            _ => k,
        }
    }))
}

pub fn two_type_lambda_matrix(model: &TwoTypeModel) -> Result<LambdaMatrix> {
    LambdaMatrix::with_uniform_weights(two_type_matrix(model)?)
}

/// Largest eigenvalue from the block-constant eigenvector ansatz:
/// `(c1 - k n2 + c2 - k n1)/2 + sqrt([(c1 - k n2) - (c2 - k n1)]^2 / 4 + k^2 n1 n2)`.
pub fn two_type_spectral_radius(model: &TwoTypeModel) -> Result<f64> {
    model.validate()?;
    let (f1, f2, k) = (model.n1 as f64, model.n2 as f64, model.kappa);
    let p = model.c1 - k * f2;
    let q = model.c2 - k * f1;
    Ok((p + q) / 2.0 + ((p - q).powi(2) / 4.0 + k * k * f1 * f2).sqrt())
}

/// `Psi` summed to `t_terms`. At `kappa = 0` this is the equity-weighted
/// closed form `sum_t (n1 c1^t + n2 c2^t) / N`; otherwise the series is
/// evaluated on the explicit matrix.
pub fn two_type_psi(model: &TwoTypeModel, t_terms: usize) -> Result<f64> {
    model.validate()?;
    if model.kappa == 0.0 {
        let (f1, f2) = (model.n1 as f64, model.n2 as f64);
        let n = f1 + f2;
        let mut total = 0.0;
        let (mut p1, mut p2) = (1.0, 1.0);
        for _ in 0..t_terms {
            total += (f1 * p1 + f2 * p2) / n;
            p1 *= model.c1;
            p2 *= model.c2;
        }
        return Ok(total);
    }
    Ok(series_terms(&two_type_lambda_matrix(model)?, t_terms)
        .iter()
        .sum())
}

/// Feasible exposure matrix for the model with self-links emptied into
/// same-type links: a constant `n x n` block `x J` becomes
/// `x n/(n-1) (J - I)`, which leaves every row and column sum (and `Psi`)
/// unchanged. Needs at least two banks of each type.
pub fn two_type_exposures(model: &TwoTypeModel) -> Result<ExposureMatrix> {
    if model.n1 < 2 || model.n2 < 2 {
        return Err(Error::InvalidModel(
            "self-links can only be emptied with at least two banks per type".into(),
        ));
    }
    let lambda = two_type_matrix(model)?;
    let bs = Arc::new(model.bank_set()?);
    let n = model.n();
    let e = 1.0 / n as f64;
    let (n1, n2) = (model.n1, model.n2);
    let s1 = n1 as f64 / (n1 - 1) as f64;
    let s2 = n2 as f64 / (n2 - 1) as f64;
    let alpha = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let v = lambda[(i, j)] * e;
        match (i < n1, j < n1) {
            (true, true) => v * s1,
            (false, false) => v * s2,
            _ => v,
        }
    });
    ExposureMatrix::from_alpha(bs, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantLeveragePsi {
    /// `sum_{t < t_terms} C^t`
    pub truncated: f64,
    /// `1 / (1 - C)` for `C < 1`.
    pub closed_form: Option<f64>,
}

/// Multiplier when every bank has the same leverage `C` (independent of
/// the exposure matrix).
pub fn constant_leverage_psi(c: f64, t_terms: usize) -> Result<ConstantLeveragePsi> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidModel(format!("leverage must be >= 0, got {c}")));
    }
    let mut truncated = 0.0;
    let mut p = 1.0;
    for _ in 0..t_terms {
        truncated += p;
        p *= c;
    }
    Ok(ConstantLeveragePsi {
        truncated,
        closed_form: (c < 1.0).then(|| 1.0 / (1.0 - c)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplification::psi_full;

    fn reference(kappa: f64) -> TwoTypeModel {
        TwoTypeModel::new(5, 50, 2.0, 0.5, kappa).unwrap()
    }

    #[test]
    fn reference_model_eigenvalues() {
        assert_eq!(reference(0.0).kappa_max(), 0.04);
        assert!((two_type_spectral_radius(&reference(0.0)).unwrap() - 2.0).abs() < 1e-15);
        assert!((two_type_spectral_radius(&reference(0.04)).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn kappa_range_enforced() {
        assert!(matches!(
            TwoTypeModel::new(5, 50, 2.0, 0.5, 0.05),
            Err(Error::KappaOutOfRange { .. })
        ));
        assert!(TwoTypeModel::new(5, 50, 2.0, 0.5, -0.01).is_err());
        assert!(TwoTypeModel::new(5, 50, 0.5, 2.0, 0.0).is_err());
    }

    #[test]
    fn small_model_matches_displayed_matrices() {
        let (c1, c2, k) = (1.5, 0.9, 0.1);
        let m = two_type_matrix(&TwoTypeModel::new(2, 3, c1, c2, k).unwrap()).unwrap();
        #[rustfmt::skip]
        let la = DMatrix::from_row_slice(5, 5, &[
            c1 / 2.0, c1 / 2.0, 0.0, 0.0, 0.0,
            c1 / 2.0, c1 / 2.0, 0.0, 0.0, 0.0,
            0.0, 0.0, c2 / 3.0, c2 / 3.0, c2 / 3.0,
            0.0, 0.0, c2 / 3.0, c2 / 3.0, c2 / 3.0,
            0.0, 0.0, c2 / 3.0, c2 / 3.0, c2 / 3.0,
        ]);
        let (a, b) = (-3.0 / 2.0, -2.0 / 3.0);
        #[rustfmt::skip]
        let delta = DMatrix::from_row_slice(5, 5, &[
            a, a, 1.0, 1.0, 1.0,
            a, a, 1.0, 1.0, 1.0,
            1.0, 1.0, b, b, b,
            1.0, 1.0, b, b, b,
            1.0, 1.0, b, b, b,
        ]);
        assert_eq!(delta_matrix(2, 3), delta);
        let expected = la + delta * k;
        assert!((m - expected).abs().max() < 1e-15);
    }

    #[test]
    fn delta_annihilates_constants() {
        let d = delta_matrix(4, 7);
        for s in d.column_iter().map(|c| c.sum()).chain(d.row_iter().map(|r| r.sum())) {
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn row_sums_follow_leverage() {
        let model = TwoTypeModel::new(3, 8, 0.9, 0.4, 0.0).unwrap();
        for k in [0.0, 0.01, 0.03, model.kappa_max()] {
            let lm = two_type_lambda_matrix(&model.with_kappa(k).unwrap()).unwrap();
            for (i, s) in lm.row_sums().into_iter().enumerate() {
                let c = if i < 3 { 0.9 } else { 0.4 };
                assert!((s - c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn equal_types_reduce_to_constant_leverage() {
        let model = TwoTypeModel::new(4, 4, 0.6, 0.6, 0.0).unwrap();
        let psi = two_type_psi(&model, 200).unwrap();
        assert!((psi - 1.0 / 0.4).abs() < 1e-12);
    }

    #[test]
    fn constant_leverage_values() {
        let z = constant_leverage_psi(0.0, 50).unwrap();
        assert_eq!(z.truncated, 1.0);
        assert_eq!(z.closed_form, Some(1.0));
        let h = constant_leverage_psi(0.5, 200).unwrap();
        assert!((h.truncated - 2.0).abs() < 1e-15);
        assert_eq!(h.closed_form, Some(2.0));
        assert_eq!(constant_leverage_psi(2.0, 6).unwrap().truncated, 63.0);
        assert_eq!(constant_leverage_psi(2.0, 6).unwrap().closed_form, None);
    }

    #[test]
    fn emptied_diagonal_keeps_psi() {
        let model = TwoTypeModel::new(3, 6, 0.8, 0.3, 0.02).unwrap();
        let m = two_type_exposures(&model).unwrap();
        assert!(m.validate().is_empty(), "{}", m.validate());
        let psi = psi_full(&m, 300).unwrap().psi_total;
        assert!((psi - two_type_psi(&model, 300).unwrap()).abs() < 1e-12);
    }
}
