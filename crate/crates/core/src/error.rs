use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the optimizer, the profile loaders and the harness.
#[derive(Debug, Error)]
pub enum SlideError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("energy budget {budget_j} J does not exceed instantiation energy {instantiation_j} J")]
    InfeasibleBudget { budget_j: f64, instantiation_j: f64 },

    #[error("energy target {q_prime} outside the invertible range (0, {cap})")]
    EtaOutOfRange { q_prime: f64, cap: f64 },

    #[error("distance {distance_m} m outside (0, {radius_m}] m")]
    DistanceOutOfRange { distance_m: f64, radius_m: f64 },

    #[error("oracle cap exceeded: {0}")]
    OracleCap(String),

    #[error("no energy-feasible point on the grid")]
    NoFeasibleGridPoint,

    #[error("unknown model id {0}")]
    UnknownModel(u32),
}

impl SlideError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SlideError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SlideError>;
