use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty dataset: {0}")]
    EmptyData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system in {context}")]
    Singular { context: String },
    #[error("Cholesky factorization failed at leading minor {minor} (jitter {jitter:e})")]
    Cholesky { minor: usize, jitter: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::EmptyData(_) => "empty_data",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Singular { .. } => "singular",
            Error::Cholesky { .. } => "cholesky",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
