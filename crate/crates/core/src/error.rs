use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: invalid {field}: {message}")]
    Validation {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("segment {index}: {message}")]
    Segment { index: usize, message: String },

    #[error("invalid posteriorgram: {0}")]
    Posteriorgram(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
