use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// configuration and input problems exit 2, numeric failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: value {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("index {index} out of range for size {bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate id {id:?} in channel {channel:?}")]
    DuplicateId { channel: String, id: String },

    #[error("missing embedding for id {id:?} in channel {channel:?}")]
    MissingEmbedding { channel: String, id: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
