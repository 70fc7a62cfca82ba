use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// `kind()` gives a stable machine-readable tag used by the CLI for its
/// one-line error prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("{0}")]
    Schema(String),

    #[error("{0}")]
    State(String),

    #[error("{0}")]
    Length(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("line {line}: {detail}")]
    Record { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Contract(_) => "contract",
            Error::Numeric { .. } => "numeric",
            Error::Schema(_) => "schema",
            Error::State(_) => "state",
            Error::Length(_) => "length",
            Error::Format { .. } => "format",
            Error::Record { .. } => "record",
            Error::Io(_) => "io",
        }
    }

    /// True for errors caused by bad user input rather than a failure while
    /// running (I/O, corrupt files, numeric blow-ups).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Format { .. } | Error::Numeric { .. }
        )
    }
}
