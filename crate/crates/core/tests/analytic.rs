mod common;

use std::sync::Arc;

use debtrank::amplification::psi_full;
use debtrank::analytic::{
    delta_matrix, two_type_exposures, two_type_lambda_matrix, two_type_matrix, two_type_psi,
    two_type_spectral_radius, TwoTypeModel,
};
use debtrank::metrics::{scalar_assortativity, NodeProperty};
use debtrank::model::spectral_radius;
use debtrank::{BankSet, Error};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model<R: Rng>(rng: &mut R, subcritical: bool) -> TwoTypeModel {
    let n1 = rng.random_range(1..15);
    let n2 = rng.random_range(1..15);
    let hi = if subcritical { 0.95 } else { 3.0 };
    let a: f64 = rng.random_range(0.05..hi);
    let b: f64 = rng.random_range(0.05..hi);
    let (c1, c2) = (a.max(b), a.min(b));
    let base = TwoTypeModel::new(n1, n2, c1, c2, 0.0).unwrap();
    let kappa = rng.random_range(0.0..=1.0) * base.kappa_max();
    base.with_kappa(kappa).unwrap()
}

#[test]
fn displayed_five_by_five_matrices() {
    let m = TwoTypeModel::new(2, 3, 2.0, 0.5, 0.0).unwrap();
    let la = two_type_matrix(&m).unwrap();
    let (a, b) = (2.0 / 2.0, 0.5 / 3.0);
    #[rustfmt::skip]
    let expect = DMatrix::from_row_slice(5, 5, &[
        a, a, 0.0, 0.0, 0.0,
        a, a, 0.0, 0.0, 0.0,
        0.0, 0.0, b, b, b,
        0.0, 0.0, b, b, b,
        0.0, 0.0, b, b, b,
    ]);
    assert!((la - expect).abs().max() < 1e-15);

    let (p, q) = (-3.0 / 2.0, -2.0 / 3.0);
    #[rustfmt::skip]
    let delta = DMatrix::from_row_slice(5, 5, &[
        p, p, 1.0, 1.0, 1.0,
        p, p, 1.0, 1.0, 1.0,
        1.0, 1.0, q, q, q,
        1.0, 1.0, q, q, q,
        1.0, 1.0, q, q, q,
    ]);
    assert!((delta_matrix(2, 3) - delta).abs().max() < 1e-15);
}

#[test]
fn delta_columns_and_rows_vanish() {
    for (n1, n2) in [(1, 1), (2, 3), (5, 50), (7, 4)] {
        let d = delta_matrix(n1, n2);
        for c in d.column_iter() {
            assert!(c.sum().abs() < 1e-12);
        }
        for r in d.row_iter() {
            assert!(r.sum().abs() < 1e-12);
        }
    }
}

#[test]
fn row_sums_stay_at_class_leverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let m = random_model(&mut rng, false);
        let lam = two_type_matrix(&m).unwrap();
        for (i, r) in lam.row_iter().enumerate() {
            let want = if i < m.n1 { m.c1 } else { m.c2 };
            assert!((r.sum() - want).abs() < 1e-12 * want.max(1.0));
        }
        assert!(lam.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn closed_form_radius_matches_eigen_solvers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let m = random_model(&mut rng, false);
        let closed = two_type_spectral_radius(&m).unwrap();
        let lam = two_type_matrix(&m).unwrap();
        let power = spectral_radius(&lam).value;
        let schur = common::eig_radius(&lam);
        assert!((closed - power).abs() < 1e-10, "{m:?}: {closed} vs {power}");
        assert!((closed - schur).abs() < 1e-10 * closed.max(1.0), "{m:?}");
    }
}

#[test]
fn reference_model_switches_regime() {
    let base = TwoTypeModel::new(5, 50, 2.0, 0.5, 0.0).unwrap();
    assert!((base.kappa_max() - 0.04).abs() < 1e-15);
    let lam = two_type_lambda_matrix(&base).unwrap();
    assert!((lam.spectral_radius() - 2.0).abs() < 1e-10);
    let h = debtrank::propagation::h_infinity_exact(&lam, &[0.01; 55]);
    assert!(matches!(h, Err(Error::SupercriticalSystem { .. })));

    let dis = base.with_kappa(0.04).unwrap();
    assert!((two_type_lambda_matrix(&dis).unwrap().spectral_radius() - 0.8).abs() < 1e-10);
    assert!(matches!(
        base.with_kappa(0.0400001),
        Err(Error::KappaOutOfRange { .. })
    ));
}

#[test]
fn low_leverage_block_doubles_the_shock() {
    // type-2 block alone: c2 = 0.5 gives h_inf / psi = 2
    let m = TwoTypeModel::new(3, 4, 0.9, 0.5, 0.0).unwrap();
    let lam = two_type_lambda_matrix(&m).unwrap();
    let h = debtrank::propagation::h_infinity_exact(&lam, &[0.01; 7]).unwrap();
    for x in &h[3..] {
        assert!((x / 0.01 - 2.0).abs() < 1e-12);
    }
    for x in &h[..3] {
        assert!((x / 0.01 - 10.0).abs() < 1e-10);
    }
}

#[test]
fn psi_never_increases_with_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let base = random_model(&mut rng, true).with_kappa(0.0).unwrap();
        let kmax = base.kappa_max();
        let grid: Vec<f64> = (0..20).map(|k| kmax * k as f64 / 19.0).collect();
        let psis: Vec<f64> = grid
            .iter()
            .map(|&k| two_type_psi(&base.with_kappa(k).unwrap(), 600).unwrap())
            .collect();
        for w in psis.windows(2) {
            assert!(w[1] - w[0] <= 1e-10, "{base:?}: {psis:?}");
        }
        // finite-difference derivative
        for &k in &grid[..19] {
            let h = kmax * 1e-4;
            let a = two_type_psi(&base.with_kappa(k).unwrap(), 600).unwrap();
            let b = two_type_psi(&base.with_kappa(k + h).unwrap(), 600).unwrap();
            // slope bound plus the rounding noise of a difference quotient
            let noise = 8.0 * f64::EPSILON * a.abs() / h;
            assert!((b - a) / h <= 1e-10 + noise, "{base:?} at {k}");
        }
    }
}

#[test]
fn equal_classes_reduce_to_constant_leverage() {
    for c in [0.1, 0.3, 0.5, 0.9] {
        let m = TwoTypeModel::new(4, 4, c, c, 0.0).unwrap();
        let want = 1.0 / (1.0 - c);
        assert!((two_type_psi(&m, 2000).unwrap() - want).abs() < 1e-10);
        let k = m.with_kappa(m.kappa_max() / 2.0).unwrap();
        assert!((two_type_psi(&k, 2000).unwrap() - want).abs() < 1e-10);
    }
}

#[test]
fn emptied_diagonal_keeps_psi() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let mut m = random_model(&mut rng, true);
        if m.n1 < 2 || m.n2 < 2 {
            continue;
        }
        m = m.with_kappa(m.kappa_max() * rng.random_range(0.0..1.0)).unwrap();
        let em = two_type_exposures(&m).unwrap();
        assert!(em.validate().is_empty());
        let psi = psi_full(&em, 600).unwrap().psi_total;
        assert!((psi - two_type_psi(&m, 600).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn block_diagonal_model_is_perfectly_assortative() {
    let m = TwoTypeModel::new(3, 4, 0.8, 0.3, 0.0).unwrap();
    let em = two_type_exposures(&m).unwrap();
    let r = scalar_assortativity(&em, NodeProperty::Leverage, NodeProperty::Leverage, 2).unwrap();
    assert!((r.r - 1.0).abs() < 1e-12);
}

#[test]
fn stochastic_matrix_powers_keep_unit_rows() {
    // S_ij = A_ij / (E_i C) with constant asset leverage C
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 0.6;
    let n = 9;
    let equity: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let assets: Vec<f64> = equity.iter().map(|e| c * e).collect();
    let bs = Arc::new(BankSet::new(equity.clone(), assets.clone(), assets).unwrap());
    let m = common::random_feasible(bs, 2000, &mut rng);
    let amounts = m.to_currency();
    let s = DMatrix::from_fn(n, n, |i, j| amounts[(i, j)] / (equity[i] * c));
    let mut p = DMatrix::identity(n, n);
    for _ in 1..=10 {
        p = &p * &s;
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
