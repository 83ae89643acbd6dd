use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate manifold: {0}")]
    Degenerate(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tensor table conflict: {0}")]
    Conflict(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("no transition boundary in the scanned field range")]
    NoCrossing,
    #[error("secular approximation invalid: {0}")]
    SecularInvalid(String),
    #[error("out of span: {0}")]
    OutOfSpan(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
