use thiserror::Error;

/// Errors surfaced by the library. `Shape` and `Config` indicate bad inputs
/// or configuration (CLI exit code 2); `Usage` indicates a call-order bug;
/// the rest are runtime failures (exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Shape(_) | Error::Config(_) | Error::Format(_))
    }
}
