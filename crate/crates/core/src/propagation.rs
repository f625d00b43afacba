//! Linear DebtRank recursion `h(t) = sum_{s<t} Lambda^s h(1)`, its exact
//! asymptote and the inverse map from a target loss back to the shock.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LambdaMatrix;

/// Propagation is aborted once any distress exceeds this magnitude.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Systems with spectral radius at or above `1 - SUPERCRITICAL_MARGIN`
/// have no finite asymptotic loss.
pub const SUPERCRITICAL_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationState {
    pub t: usize,
    /// Relative equity loss per bank, not clamped at 1.
    pub h: Vec<f64>,
    /// `H(t) = sum_i e_i h_i(t)`.
    pub total_loss: f64,
    /// `h_i(t) >= 1`.
    pub bankrupt: Vec<bool>,
}

impl PropagationState {
    fn new(t: usize, h: Vec<f64>, weights: &[f64]) -> Self {
        let total_loss = weights.iter().zip(&h).map(|(e, h)| e * h).sum();
        let bankrupt = h.iter().map(|&x| x >= 1.0).collect();
        Self {
            t,
            h,
            total_loss,
            bankrupt,
        }
    }
}

fn check_shock(lm: &LambdaMatrix, h1: &[f64]) -> Result<()> {
    if h1.len() != lm.n() {
        return Err(Error::DimensionMismatch(format!(
            "shock has {} components for {} banks",
            h1.len(),
            lm.n()
        )));
    }
    if let Some((i, v)) = h1.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidShock(format!(
            "component {i} is {v}; shocks must be finite and non-negative"
        )));
    }
    Ok(())
}

/// States `t = 1..=t_max`. Fails with [`Error::NonFiniteOverflow`] carrying
/// the last finite state once any `|h_i|` passes [`DIVERGENCE_GUARD`].
pub fn propagate(lm: &LambdaMatrix, h1: &[f64], t_max: usize) -> Result<Vec<PropagationState>> {
    check_shock(lm, h1)?;
    if t_max == 0 {
        return Err(Error::InvalidShock("t_max must be at least 1".into()));
    }
    let weights = lm.weights();
    let mut term = DVector::from_column_slice(h1);
    let mut next = DVector::zeros(lm.n());
    let mut h = term.clone();
    let mut states = Vec::with_capacity(t_max);
    states.push(PropagationState::new(1, h.as_slice().to_vec(), weights));

    for t in 2..=t_max {
        lm.matrix().mul_to(&term, &mut next);
        std::mem::swap(&mut term, &mut next);
        h += &term;
        if h.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_GUARD) {
            let last = states.pop().expect("at least the initial state");
            return Err(Error::NonFiniteOverflow {
                t,
                last: Box::new(last),
            });
        }
        states.push(PropagationState::new(t, h.as_slice().to_vec(), weights));
    }
    Ok(states)
}

/// Solves `(I - Lambda) h_inf = h(1)` by LU with partial pivoting.
pub fn h_infinity_exact(lm: &LambdaMatrix, h1: &[f64]) -> Result<Vec<f64>> {
    check_shock(lm, h1)?;
    let lambda = lm.spectral_radius();
    if lambda >= 1.0 - SUPERCRITICAL_MARGIN {
        return Err(Error::SupercriticalSystem { lambda });
    }
    let n = lm.n();
    let system = DMatrix::identity(n, n) - lm.matrix();
    let rhs = DVector::from_column_slice(h1);
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::SupercriticalSystem { lambda })?;
    Ok(solution.as_slice().to_vec())
}

/// Shock that produces the target asymptotic loss, with per-component
/// reachability (negative entries cannot be produced by a real shock).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialShock {
    pub h1: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl InitialShock {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

/// `h(1) = (I - Lambda) h_inf` as a matrix-vector product.
pub fn initial_shock_from_target(lm: &LambdaMatrix, h_inf: &[f64]) -> Result<InitialShock> {
    if h_inf.len() != lm.n() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} components for {} banks",
            h_inf.len(),
            lm.n()
        )));
    }
    let target = DVector::from_column_slice(h_inf);
    let h1 = &target - lm.matrix() * &target;
    let feasible = h1.iter().map(|&x| x >= 0.0).collect();
    Ok(InitialShock {
        h1: h1.as_slice().to_vec(),
        feasible,
    })
}

/// Per-component statistics of `h(1)` over targets drawn uniformly from
/// the no-bankruptcy box `[0, 1)^N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShockRanges {
    pub n_samples: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Fraction of draws whose shock is non-negative in every component.
    pub nonnegative_fraction: f64,
}

/// Target components are drawn independently.
pub fn sample_no_bankruptcy_shocks(
    lm: &LambdaMatrix,
    n_samples: usize,
    rng_seed: u64,
) -> Result<ShockRanges> {
    if n_samples == 0 {
        return Err(Error::InvalidShock("n_samples must be at least 1".into()));
    }
    let n = lm.n();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    let mut sum = vec![0.0; n];
    let mut nonnegative = 0usize;
    let mut target = DVector::zeros(n);
    let mut image = DVector::zeros(n);

    for _ in 0..n_samples {
        target.iter_mut().for_each(|x| *x = rng.random::<f64>());
        lm.matrix().mul_to(&target, &mut image);
        let mut ok = true;
        for i in 0..n {
            let h1 = target[i] - image[i];
            min[i] = min[i].min(h1);
            max[i] = max[i].max(h1);
            sum[i] += h1;
            ok &= h1 >= 0.0;
        }
        nonnegative += ok as usize;
    }
    let mean = sum.into_iter().map(|s| s / n_samples as f64).collect();
    Ok(ShockRanges {
        n_samples,
        min,
        max,
        mean,
        nonnegative_fraction: nonnegative as f64 / n_samples as f64,
    })
}
