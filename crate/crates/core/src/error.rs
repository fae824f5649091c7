//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DqError>;

#[derive(Debug, Error)]
pub enum DqError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("ragged csv: rows with unexpected field counts at lines {lines:?}")]
    RaggedRows { lines: Vec<u64> },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("gateway error: {0}")]
    Gateway(String),

    #[error("replay cache miss for request {key}")]
    ReplayMiss { key: String },

    #[error("no scripted response matches the request")]
    StubMiss,

    #[error("no parseable JSON in completion")]
    JsonExtract { raw: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("regex `{pattern}` failed to compile: {message}")]
    BadRegex { pattern: String, message: String },

    #[error("reference file `{file}` lacks column `{column}`")]
    MissingRefColumn { file: String, column: String },

    #[error("validator compile error for `{rule}`: {message}")]
    Compile { rule: String, message: String },

    #[error("sandbox error: {0}")]
    Sandbox(String),

    #[error("external validator timed out after {seconds}s")]
    SandboxTimeout { seconds: u64 },

    #[error("external validator protocol violation: {0}")]
    Protocol(String),

    #[error("mask shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl DqError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DqError::Io {
            path: path.into(),
            source,
        }
    }
}
