use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Every count is zero, so the intercept is unbounded below.
    #[error("all counts are zero; the intercept has no finite minimizer")]
    DegenerateCounts,

    #[error("linear predictor {value} exceeds the overflow cap {cap}")]
    OverflowExponent { value: f64, cap: f64 },

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("{fixed_one} variables fixed to one exceeds the budget k = {k}")]
    InfeasibleFixing { fixed_one: usize, k: usize },

    #[error("exhaustive enumeration over {count} supports exceeds the guard of {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{line}:{column}: {message}")]
    ModelSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::DegenerateCounts => "degenerate_counts",
            Error::OverflowExponent { .. } => "overflow_exponent",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InfeasibleFixing { .. } => "infeasible_fixing",
            Error::TooLarge { .. } => "too_large",
            Error::Parse { .. } => "parse",
            Error::ModelSyntax { .. } => "model_syntax",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
