use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: non-finite result ({detail})")]
    Overflow { op: &'static str, detail: String },

    #[error("expected a scalar output, found shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("{0} is not attached to the differentiation tape")]
    NotOnTape(&'static str),

    #[error("tensors from different tapes were combined")]
    TapeMismatch,

    #[error("degenerate Jacobian at sample {sample}: smallest singular value {s1:e}")]
    DegenerateJacobian { sample: usize, s1: f64 },

    #[error("non-finite Rayleigh quotient at sample {sample}, iteration {iteration}")]
    NonFiniteRayleigh { sample: usize, iteration: usize },

    #[error(
        "log-determinant series diverged at sample {sample} (term {term}); \
         increase the spectral scale c"
    )]
    SeriesDivergence { sample: usize, term: usize },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint field `{field}`: expected {expected}, found {found}")]
    Checkpoint {
        field: String,
        expected: String,
        found: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged at iteration {iteration}: {log}")]
    Diverged { iteration: u64, log: String },

    #[error("resume refused: {0}")]
    Resume(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
