use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite {what} at step {t} (state {state:?})")]
    NonFinite {
        t: usize,
        what: &'static str,
        state: Vec<f64>,
    },

    #[error("truncation set at step {t} is empty: {reason}")]
    EmptySet { t: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{function} is undefined at x = {x}")]
    Domain { function: &'static str, x: f64 },

    #[error("step matrix at step {t} is singular or ill-conditioned (condition {condition:e})")]
    SingularStep { t: usize, condition: f64 },

    #[error("matrix input rejected: {0}")]
    InvalidMatrix(String),

    #[error("trajectory has no paired noise-at-root draws; re-run with root-noise recording enabled")]
    MissingRootNoise,

    #[error("no grid point lies in the annulus {inner} <= |z - z0| <= {outer}")]
    EmptyAnnulus { inner: f64, outer: f64 },

    #[error("invalid expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("replication {rep} failed: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (parameters, config files, expressions).
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidParameter { .. }
            | Error::Expression { .. }
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidMatrix(_)
            | Error::MissingRootNoise => true,
            Error::Replication { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// True for numerical failures during a run (blow-up, singular steps, domain errors).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::EmptySet { .. }
            | Error::Domain { .. }
            | Error::SingularStep { .. }
            | Error::EmptyAnnulus { .. } => true,
            Error::Replication { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
