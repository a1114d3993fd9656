use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no sources")]
    NoSources,

    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights sum to {sum}, outside tolerance {tol} of 1")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no samples")]
    NoSamples,

    #[error("mixture assigns zero probability to sample `{sample_id}`")]
    ZeroProbability { sample_id: String },

    #[error("loss kind {found} is not valid here (expected {expected})")]
    WrongLossKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("targets are required for the mse loss")]
    MissingTargets,

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {needed} observations, got {found}")]
    Underdetermined { needed: usize, found: usize },

    #[error("design matrix is rank deficient (rank {rank}, need {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error(
        "grid has {count} compositions, above the cap of {cap}; reduce the resolution (smaller m)"
    )]
    GridTooLarge { count: u128, cap: u128 },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
