use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("class {0} has no samples")]
    EmptyClass(u8),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("labels contain a single class; both classes are required for {0}")]
    DegenerateLabels(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("validation error at row {row}: {msg}")]
    Validation { row: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("perturbation {0} requires an image shape")]
    MissingShape(&'static str),

    #[error("rate is undefined: {0}")]
    UndefinedRate(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Process exit codes used by the command line front-end.
pub mod exit_code {
    pub const IO: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const SHAPE: i32 = 5;
    pub const DIVERGENCE: i32 = 6;
    pub const PARAMETER: i32 = 7;
    pub const DATA: i32 = 8;
    pub const CHECK_FAILED: i32 = 9;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => exit_code::IO,
            Error::Format(_) => exit_code::FORMAT,
            Error::Shape { .. } => exit_code::SHAPE,
            Error::Divergence { .. } | Error::NonFinite(_) => exit_code::DIVERGENCE,
            Error::Parameter(_) | Error::MissingShape(_) => exit_code::PARAMETER,
            Error::EmptyInput(_)
            | Error::EmptyClass(_)
            | Error::DegenerateLabels(_)
            | Error::Consistency(_)
            | Error::Validation { .. }
            | Error::InsufficientData(_)
            | Error::UndefinedRate(_) => exit_code::DATA,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => Error::Io(e),
                other => Error::Format(format!("{other:?}")),
            }
        } else {
            Error::Format(err.to_string())
        }
    }
}
