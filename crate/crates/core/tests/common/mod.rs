#![allow(dead_code)]

use std::sync::Arc;

use debtrank::optimizer::{initial_feasible_matrix, propose_d_move};
use debtrank::{BankSet, ExposureMatrix};
use nalgebra::DMatrix;
use rand::Rng;

/// Random balance sheets with asset leverage in `lev` and liabilities that
/// are a random reshuffle of the same total.
pub fn random_bank_set<R: Rng>(n: usize, lev: (f64, f64), rng: &mut R) -> BankSet {
    loop {
        let equity: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let assets: Vec<f64> = equity
            .iter()
            .map(|e| e * rng.random_range(lev.0..lev.1))
            .collect();
        let total: f64 = assets.iter().sum();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let scale = total / raw.iter().sum::<f64>();
        let liabilities: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let bs = BankSet::new(equity, assets, liabilities).unwrap();
        if initial_feasible_matrix(Arc::new(bs.clone())).is_ok() {
            return bs;
        }
    }
}

/// Proportional fill followed by `moves` unconditionally applied D-moves.
pub fn random_feasible<R: Rng>(bs: Arc<BankSet>, moves: usize, rng: &mut R) -> ExposureMatrix {
    let mut m = initial_feasible_matrix(bs).unwrap();
    for _ in 0..moves {
        if let Some(mv) = propose_d_move(&m, 0.5, rng).unwrap() {
            m = m.apply_move(&mv);
        }
    }
    m
}

/// `sum_{t < terms} e^T Lambda^t 1` with plain nested loops.
pub fn naive_psi(alpha: &DMatrix<f64>, equity_shares: &[f64], terms: usize) -> f64 {
    let n = equity_shares.len();
    let lam: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| alpha[(i, j)] / equity_shares[i]).collect())
        .collect();
    let mut v = vec![1.0; n];
    let mut total = 0.0;
    for _ in 0..terms {
        total += equity_shares.iter().zip(&v).map(|(e, x)| e * x).sum::<f64>();
        v = (0..n)
            .map(|i| (0..n).map(|j| lam[i][j] * v[j]).sum())
            .collect();
    }
    total
}

/// Largest eigenvalue modulus from the Schur decomposition.
pub fn eig_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn naive_reciprocal(alpha: &DMatrix<f64>) -> usize {
    let n = alpha.nrows();
    let mut c = 0;
    for i in 0..n {
        for j in 0..n {
            if i < j && alpha[(i, j)] > 0.0 && alpha[(j, i)] > 0.0 {
                c += 1;
            }
        }
    }
    c
}
