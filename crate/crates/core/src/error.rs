use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("weight store checksum mismatch")]
    Checksum,

    #[error("unsupported weight store version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("weight mismatch at layer `{layer}`: {detail}")]
    WeightMismatch { layer: String, detail: String },

    #[error("{0}")]
    Metric(String),

    #[error("training aborted: {0}")]
    Aborted(Box<crate::trainer::AbortSnapshot>),

    #[error("config {path}:{line}: {message}")]
    ConfigFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
