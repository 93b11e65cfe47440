use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto exit codes: config
/// errors to 2, data errors to 3, numerical/diagnostics errors to 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("numerical diagnostics: {0}")]
    Diagnostics(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("size cap exceeded: {0}")]
    Size(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
