use thiserror::Error;

/// Crate-wide error type. Variants are grouped by pipeline stage so the CLI
/// can map them onto categorized exit messages.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
