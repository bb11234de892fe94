use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.4}, {y:.4}, {z:.4}) lies outside the field bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfImage {
        u: i64,
        v: i64,
        width: usize,
        height: usize,
    },

    #[error("dataset has no annotated pixels")]
    NoAnnotatedPixels,

    #[error("unknown phrase '{phrase}'; vocabulary: {}", vocabulary.join(", "))]
    UnknownPhrase {
        phrase: String,
        vocabulary: Vec<String>,
    },

    #[error("similarity matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("scene rejected: {0}")]
    InvalidScene(String),

    #[error("cannot parse query '{text}': no known predicate; predicates: {}", predicates.join(", "))]
    QueryParse {
        text: String,
        predicates: Vec<String>,
    },

    #[error("non-finite loss at step {step}: {terms}")]
    NonFiniteLoss { step: usize, terms: String },

    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
