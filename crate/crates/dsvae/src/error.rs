//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shape mismatch; names the operation and the offending shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid argument or input data (NaN samples, empty corpus, bad flag...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration rejected during validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// Binary or text format violation (checkpoint, DSFEAT1, WAV, CSV, trials).
    #[error("format error: {0}")]
    Format(String),

    /// Training or optimization produced non-finite values.
    #[error("diverged: {0}")]
    Diverged(String),

    /// An identifier (utterance, parameter name) could not be resolved.
    #[error("missing id: {0}")]
    MissingId(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Exit-code class for the CLI: validation errors map to 1, runtime
    /// failures (I/O, divergence) to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Diverged(_) => 2,
            _ => 1,
        }
    }
}
