use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported dtype {0:?} (expected '<f4' or '<f8')")]
    UnsupportedDtype(String),

    #[error("shape {0:?} overflows the addressable element count")]
    ShapeOverflow(Vec<usize>),

    #[error("negative entry {value} at flat index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("non-finite entry at flat index {0}")]
    NonFiniteEntry(usize),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("solver diverged: non-finite value in {factor} after iteration {iteration}")]
    Divergence { factor: &'static str, iteration: usize },

    #[error("nnls did not reach the KKT certificate within {iters} iterations (column {column}, worst violation {violation:e})")]
    NnlsBudget {
        column: usize,
        iters: usize,
        violation: f64,
    },

    #[error("missing image files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingImages(Vec<PathBuf>),

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

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 invalid input, 3 solver divergence, 4 I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NnlsBudget { .. } => 3,
            Error::Io { .. } | Error::MissingImages(_) => 4,
            Error::Image {
                source: image::ImageError::IoError(_),
                ..
            } => 4,
            _ => 2,
        }
    }
}
