//! DebtRank shock propagation on interbank exposure networks.
//!
//! The crate computes the shock multiplier `Psi` and its node-local/network
//! decomposition, and searches the space of exposure matrices with fixed
//! per-bank totals for configurations that minimize or maximize it.

pub mod amplification;
pub mod analytic;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod propagation;

pub use error::{Error, Result};
pub use model::{BankSet, ExposureMatrix, LambdaMatrix};
