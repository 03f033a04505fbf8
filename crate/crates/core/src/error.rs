use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DiarError>;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum DiarError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("unsupported channel count {0} (mono required)")]
    UnsupportedChannels(u16),

    #[error("audio stream is empty")]
    EmptyAudio,

    #[error("{what} too short: need at least {needed}, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {0:?} has fewer than 2 samples")]
    DegenerateClass(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("smoothing window of {window} taps exceeds contour length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("cannot form {k} clusters from {n} items")]
    TooFewItems { n: usize, k: usize },

    #[error("{0} is undefined for this input")]
    UndefinedMetric(&'static str),

    #[error("insufficient source audio: {0}")]
    InsufficientAudio(String),
}

impl DiarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiarError::Io {
            path: path.into(),
            source,
        }
    }
}
