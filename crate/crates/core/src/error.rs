use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown {kind} tag {tag:?}")]
    UnknownTag { kind: &'static str, tag: String },
    #[error("missing required reference: {0}")]
    MissingReference(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("version mismatch: file has {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("truncated payload in episode {episode}")]
    Truncated { episode: usize },
    #[error("truncated payload: {0}")]
    TruncatedSection(&'static str),
    #[error("out-of-order task index {got}, expected {expected}")]
    TaskOrder { expected: usize, got: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { context, expected, got })
    }
}
