use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("rank error: requested rank {requested}, at most {max} allowed")]
    Rank { requested: usize, max: usize },
    #[error("degenerate span: {0}")]
    DegenerateSpan(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("pilot method {method} failed: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 for validation and config problems, 2 for I/O, 3 for numerical
    /// failures (non-finite values encountered).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Method { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
