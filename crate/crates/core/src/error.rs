use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so callers (notably the CLI) can map them to
/// stable exit codes with [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("capacity error: {requested} exceeds the configured cap of {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite: pivot {pivot} has value {value:e} (floor {floor:e})")]
    NotPositiveDefinite { pivot: usize, value: f64, floor: f64 },

    #[error("negative correction variance {value:e} for residue class {class}")]
    NegativeCorrectionVariance { class: usize, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    InsufficientData,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_) | Error::Capacity { .. } | Error::State(_) | Error::Io(_) => {
                ErrorKind::Input
            }
            Error::Domain(_)
            | Error::NotPositiveDefinite { .. }
            | Error::NegativeCorrectionVariance { .. } => ErrorKind::Numerical,
            Error::InsufficientData(_) => ErrorKind::InsufficientData,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
