use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("singular system at pivot {pivot}: {hint}")]
    Singular { pivot: usize, hint: String },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid constellation: {0}")]
    Constellation(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Prefixes the message with a cascade layer index (1-based).
    pub fn in_layer(self, layer: usize) -> Self {
        self.prefixed(&format!("layer {layer}"))
    }

    /// Tags the error with the output slice it came from.
    pub fn in_slice(self, slice: usize) -> Self {
        self.prefixed(&format!("output slice {slice}"))
    }

    fn prefixed(self, tag: &str) -> Self {
        match self {
            Error::Dimension { op, detail } => Error::Dimension {
                op,
                detail: format!("{tag}: {detail}"),
            },
            Error::Input(m) => Error::Input(format!("{tag}: {m}")),
            Error::Singular { pivot, hint } => Error::Singular {
                pivot,
                hint: format!("{tag}: {hint}"),
            },
            Error::Numeric(m) => Error::Numeric(format!("{tag}: {m}")),
            Error::Constellation(m) => Error::Constellation(format!("{tag}: {m}")),
            other => other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Input(_) => 1,
            Error::Format(_) | Error::Io(_) => 2,
            Error::Singular { .. }
            | Error::Numeric(_)
            | Error::Constellation(_)
            | Error::Init(_) => 3,
            Error::Verification(_) => 4,
        }
    }
}
