use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags, bad config files, contradictory settings.
    #[error("config: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data: {0}")]
    Data(String),

    /// Malformed record in a line-oriented input file.
    #[error("{path}:{line}: {msg}")]
    Ingest { path: String, line: usize, msg: String },

    /// Non-finite losses, failed gradient checks, degenerate matrices.
    #[error("numerical: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
