use thiserror::Error;

/// Errors produced by the separation engines and the asymptotic predictions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid source parameters: {0}")]
    InvalidSpec(String),

    #[error("numeric integration failed: {0}")]
    Numeric(String),

    #[error(
        "ill-conditioned covariance: smallest eigenvalue {min:e} is below the floor {floor:e}"
    )]
    IllConditioned { min: f64, floor: f64 },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("insufficient samples: need N > d, got N = {n} with d = {d}")]
    InsufficientSamples { n: usize, d: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error(
        "degenerate pairing: nonlinearity {nonlinearity} (row {row}) paired with source {source_name} has alpha = {alpha:e}"
    )]
    DegeneratePairing {
        row: usize,
        nonlinearity: String,
        source_name: String,
        alpha: f64,
    },

    #[error("unsupported nonlinearity: {0}")]
    UnsupportedNonlinearity(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("non-identifiable: {0}")]
    NonIdentifiable(String),

    #[error("experiment invalid: {failures} of {trials} trials failed{detail}")]
    ExperimentInvalid {
        failures: usize,
        trials: usize,
        /// Empty, or `": "` followed by the distinct failure diagnostics.
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by malformed input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::Dimension(_)
                | Error::Config(_)
                | Error::InsufficientSamples { .. }
                | Error::UnsupportedDimension(_)
                | Error::UnsupportedNonlinearity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
