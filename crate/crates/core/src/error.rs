//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, estimation, and experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A dense enumeration would materialize more entries than the
    /// crate-wide limit allows.
    #[error("enumeration of {entries} entries exceeds the limit of {limit}")]
    EnumerationTooLarge { entries: u128, limit: u128 },

    /// Two objects that must share shapes (spaces, scopes, lengths) do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A feature value or index is outside its space.
    #[error("index {value} out of range for bound {bound}")]
    OutOfRange { value: usize, bound: usize },

    /// A statistic was requested from a joint with no accumulated samples.
    #[error("empty joint: no samples accumulated")]
    EmptyJoint,

    /// An operation over a collection received no elements.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A check that needs recorded ground truth found none.
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    /// A ratio against the shared causal model is undefined because the
    /// causal factor is zero where an environment puts positive mass.
    #[error("division by zero support: {0}")]
    DivisionByZeroSupport(String),

    /// A synthetic universe specification cannot be realized within the
    /// allowed rejection budget.
    #[error("infeasible universe specification: {0}")]
    SpecInfeasible(String),

    /// A configuration file or CLI argument combination is unusable.
    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: configuration problems exit with 2,
    /// runtime failures with 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigError(_) => 2,
            _ => 3,
        }
    }
}
