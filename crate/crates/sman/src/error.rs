use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmanError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("determinism error: {0}")]
    Determinism(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("step error: {0}")]
    Step(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SmanError>;
