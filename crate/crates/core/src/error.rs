use thiserror::Error;

/// Errors produced by the encoder, the extension strategies, the benchmark
/// generators and the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("position error: {0}")]
    Position(String),

    #[error("length error: input has {len} tokens but the active context is {limit}")]
    Length { len: usize, limit: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty index")]
    EmptyIndex,

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("mode error: {0}")]
    Mode(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
