use thiserror::Error;

/// Errors shared across the estimation, matching, and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty interaction log: nothing to fit")]
    EmptyLog,

    #[error("degenerate design: singular Hessian with ridge = 0 (the log does not span the feature space)")]
    DegenerateDesign,

    #[error(
        "MLE did not converge within {iterations} iterations (gradient norm {grad_norm:.3e} at the last iterate)"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("covariance matrix is not positive definite (jitter retry failed)")]
    SingularCovariance,

    #[error("covariance for item {item} is singular; the item has too little data to rank")]
    SingularItemCovariance { item: usize },

    #[error("{positions} positions cannot be filled from {items} items")]
    TooManyPositions { positions: usize, items: usize },

    #[error("enumeration of {size} ordered selections exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("outcome {value} lies outside [0, {max}]")]
    OutcomeOutOfRange { value: f64, max: f64 },

    #[error("aggregation input outside the domain of the position transform: {0}")]
    AggregationDomain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("round {round} failed: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
