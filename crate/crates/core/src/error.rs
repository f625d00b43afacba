use thiserror::Error;

use crate::model::ValidationReport;
use crate::propagation::PropagationState;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bank {index} has non-positive equity {value}")]
    NonPositiveEquity { index: usize, value: f64 },

    #[error("bank {index} has negative or non-finite {field} {value}")]
    NegativeBalance {
        index: usize,
        field: &'static str,
        value: f64,
    },

    #[error("market imbalance: total assets {assets} vs total liabilities {liabilities}")]
    MarketImbalance { assets: f64, liabilities: f64 },

    #[error("exposure matrix violates constraints: {0}")]
    InvalidExposures(ValidationReport),

    #[error("invalid shock vector: {0}")]
    InvalidShock(String),

    #[error("spectral radius {lambda} >= 1: propagation series diverges")]
    SupercriticalSystem { lambda: f64 },

    #[error("propagation overflowed at t={t}")]
    NonFiniteOverflow {
        t: usize,
        last: Box<PropagationState>,
    },

    #[error("infeasible margins: {0}")]
    InfeasibleMargins(String),

    #[error("kappa {kappa} outside [0, {kappa_max}]")]
    KappaOutOfRange { kappa: f64, kappa_max: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("bank {0} has zero assets and zero liabilities; equity cannot be reconstructed")]
    DegenerateBank(usize),

    #[error("degenerate property: {0}")]
    DegenerateProperty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: unknown node id '{id}'")]
    UnknownNodeId { path: String, line: u64, id: String },

    #[error("{path}:{line}: self-loop on node '{id}'")]
    SelfLoopEdge { path: String, line: u64, id: String },

    #[error("{path}:{line}: negative exposure {value}")]
    NegativeExposure { path: String, line: u64, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonPositiveEquity { .. } => "NonPositiveEquity",
            Error::NegativeBalance { .. } => "NegativeBalance",
            Error::MarketImbalance { .. } => "MarketImbalance",
            Error::InvalidExposures(_) => "InvalidExposures",
            Error::InvalidShock(_) => "InvalidShock",
            Error::SupercriticalSystem { .. } => "SupercriticalSystem",
            Error::NonFiniteOverflow { .. } => "NonFiniteOverflow",
            Error::InfeasibleMargins(_) => "InfeasibleMargins",
            Error::KappaOutOfRange { .. } => "KappaOutOfRange",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::DegenerateBank(_) => "DegenerateBank",
            Error::DegenerateProperty(_) => "DegenerateProperty",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "ParseError",
            Error::UnknownNodeId { .. } => "UnknownNodeId",
            Error::SelfLoopEdge { .. } => "SelfLoopEdge",
            Error::NegativeExposure { .. } => "NegativeExposure",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
