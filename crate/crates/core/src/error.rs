use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid label {label} (num_classes = {num_classes})")]
    InvalidLabel { label: u8, num_classes: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("degenerate target: no valid (non-ignore) pixels")]
    DegenerateTarget,

    #[error("degenerate evaluation: no defined IoU in class subset {0:?}")]
    DegenerateEval(Vec<usize>),

    #[error("incompatible parameter sets: {0}")]
    IncompatibleParams(String),

    #[error("stale forward trace: {0}")]
    StaleTrace(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
