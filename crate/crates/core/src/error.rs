use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, non-finite values, out-of-range parameters.
    #[error("validation: {0}")]
    Validation(String),

    /// Input whose numerical rank is too low for the requested operation.
    #[error("degenerate input: numerical rank {rank} < required {required}")]
    Degenerate { rank: usize, required: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("generation: {0}")]
    Generation(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-parseable category, used as the CLI's error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Degenerate { .. } => "degenerate",
            Error::Singular(_) => "singular",
            Error::Generation(_) => "generation",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
