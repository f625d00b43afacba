//! Synthetic bank populations and equity reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::analytic::TwoTypeModel;
use crate::error::{Error, Result};
use crate::model::BankSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// Pareto equities (scale 1), uniform leverage, `A_i = L_i`.
    ParetoUniform {
        n_banks: usize,
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default = "default_lo")]
        leverage_lo: f64,
        #[serde(default = "default_hi")]
        leverage_hi: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `E_i = 1`, `A_i = L_i = rescale * (0.2 + 0.6 i / (N - 1))`.
    Grid {
        n_banks: usize,
        #[serde(default = "default_rescale")]
        rescale: f64,
    },
    TwoType {
        n1: usize,
        n2: usize,
        c1: f64,
        c2: f64,
        #[serde(default = "default_equity")]
        equity: f64,
    },
    Custom {
        equity: Vec<f64>,
        assets: Vec<f64>,
        liabilities: Vec<f64>,
    },
}

fn default_exponent() -> f64 {
    3.0
}
fn default_lo() -> f64 {
    0.32
}
fn default_hi() -> f64 {
    0.96
}
fn default_rescale() -> f64 {
    1.0
}
fn default_equity() -> f64 {
    1.0
}

impl PopulationSpec {
    /// `N` Pareto(3) banks with leverage in `(0.32, 0.96)`.
    pub fn illustrative(n_banks: usize, seed: u64) -> Self {
        PopulationSpec::ParetoUniform {
            n_banks,
            exponent: default_exponent(),
            leverage_lo: default_lo(),
            leverage_hi: default_hi(),
            seed,
        }
    }

    pub fn grid(n_banks: usize, rescale: f64) -> Self {
        PopulationSpec::Grid { n_banks, rescale }
    }

    pub fn n_banks(&self) -> usize {
        match self {
            PopulationSpec::ParetoUniform { n_banks, .. } | PopulationSpec::Grid { n_banks, .. } => {
                *n_banks
            }
            PopulationSpec::TwoType { n1, n2, .. } => n1 + n2,
            PopulationSpec::Custom { equity, .. } => equity.len(),
        }
    }
}

/// Grid leverages `rescale * (0.2 + 0.6 i / (N - 1))`.
pub fn grid_leverage(n_banks: usize, rescale: f64) -> Vec<f64> {
    let span = (n_banks - 1) as f64;
    (0..n_banks)
        .map(|i| rescale * (0.2 + 0.6 * i as f64 / span))
        .collect()
}

pub fn generate_population(spec: &PopulationSpec) -> Result<BankSet> {
    let invalid = |msg: String| Err(Error::InvalidSpec(msg));
    match spec {
        &PopulationSpec::ParetoUniform {
            n_banks,
            exponent,
            leverage_lo,
            leverage_hi,
            seed,
        } => {
            if n_banks < 2 {
                return invalid(format!("need at least 2 banks, got {n_banks}"));
            }
            if !(exponent > 1.0) {
                return invalid(format!("Pareto exponent must exceed 1, got {exponent}"));
            }
            if !(leverage_lo > 0.0 && leverage_hi > leverage_lo && leverage_hi.is_finite()) {
                return invalid(format!(
                    "leverage interval ({leverage_lo}, {leverage_hi}) must satisfy 0 < lo < hi"
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pareto = Pareto::new(1.0, exponent)
                .map_err(|e| Error::InvalidSpec(format!("Pareto: {e}")))?;
            let mut equity = Vec::with_capacity(n_banks);
            let mut assets = Vec::with_capacity(n_banks);
            for _ in 0..n_banks {
                let e = pareto.sample(&mut rng);
                let lev = rng.random_range(leverage_lo..leverage_hi);
                equity.push(e);
                assets.push(lev * e);
            }
            BankSet::new(equity, assets.clone(), assets)
        }
        &PopulationSpec::Grid { n_banks, rescale } => {
            if n_banks < 2 {
                return invalid(format!("need at least 2 banks, got {n_banks}"));
            }
            if !(rescale > 0.0 && rescale.is_finite()) {
                return invalid(format!("rescale factor must be positive, got {rescale}"));
            }
            let lev = grid_leverage(n_banks, rescale);
            BankSet::new(vec![1.0; n_banks], lev.clone(), lev)
        }
        &PopulationSpec::TwoType {
            n1,
            n2,
            c1,
            c2,
            equity,
        } => {
            let model = TwoTypeModel {
                n1,
                n2,
                c1,
                c2,
                kappa: 0.0,
                equity,
            };
            model
                .validate()
                .map_err(|e| Error::InvalidSpec(e.to_string()))?;
            model.bank_set()
        }
        PopulationSpec::Custom {
            equity,
            assets,
            liabilities,
        } => BankSet::new(equity.clone(), assets.clone(), liabilities.clone()),
    }
}

/// `E_i = max(A_i, L_i) * markup * xi_i` with `xi_i ~ N(xi_mean, xi_sd)`,
/// redrawn while `xi_i <= xi_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquityReconstruction {
    pub markup: f64,
    pub xi_mean: f64,
    pub xi_sd: f64,
    pub xi_floor: f64,
}

impl Default for EquityReconstruction {
    fn default() -> Self {
        Self {
            markup: 1.25,
            xi_mean: 1.0,
            xi_sd: 0.2,
            xi_floor: 0.2,
        }
    }
}

impl EquityReconstruction {
    pub fn apply<R: Rng + ?Sized>(
        &self,
        assets: &[f64],
        liabilities: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if assets.len() != liabilities.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} assets vs {} liabilities",
                assets.len(),
                liabilities.len()
            )));
        }
        if !(self.xi_sd >= 0.0 && self.xi_mean > self.xi_floor && self.markup > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "invalid equity reconstruction parameters {self:?}"
            )));
        }
        let normal = Normal::new(self.xi_mean, self.xi_sd)
            .map_err(|e| Error::InvalidSpec(format!("normal: {e}")))?;
        assets
            .iter()
            .zip(liabilities)
            .enumerate()
            .map(|(i, (&a, &l))| {
                let base = a.max(l);
                if !(base > 0.0) {
                    return Err(Error::DegenerateBank(i));
                }
                let xi = loop {
                    let x = normal.sample(rng);
                    if x > self.xi_floor {
                        break x;
                    }
                };
                Ok(base * self.markup * xi)
            })
            .collect()
    }
}

/// Equity reconstruction with the default parameters.
pub fn reconstruct_equity(assets: &[f64], liabilities: &[f64], rng_seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    EquityReconstruction::default().apply(assets, liabilities, &mut rng)
}
