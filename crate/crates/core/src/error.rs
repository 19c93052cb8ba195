use thiserror::Error;

/// Errors raised by estimation, testing and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("need at least {needed} clusters, found {found}")]
    TooFewClusters { needed: usize, found: usize },

    #[error("cluster {cluster} is empty")]
    EmptyCluster { cluster: usize },

    #[error("non-finite input in {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },

    #[error("singular {what}")]
    Singular { what: &'static str },

    #[error("rank-deficient {what}")]
    RankDeficient { what: String },

    #[error("unidentified Jacobian: instrument cross-moment is exactly zero")]
    UnidentifiedJacobian,

    #[error("sign set too large: 2^{q} vectors requested in exhaustive mode")]
    SignSetTooLarge { q: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column \"{column}\": {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the data or the numerics rather than by usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::RankDeficient { .. }
                | Error::UnidentifiedJacobian
                | Error::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
