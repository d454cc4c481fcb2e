use thiserror::Error;

use crate::dgp::DgpError;
use crate::estimators::EstimatorError;
use crate::oracles::OracleError;
use crate::panel::PanelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Each module has its own error enum; this wraps them so
/// callers that drive the whole pipeline can use a single `?`.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration, malformed input files, unsupported options.
    Config,
    /// Numerical failure: degenerate weights, overlap, singular matrices.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Panel(_) | Error::Dgp(_) => ErrorClass::Config,
            Error::Estimator(e) => e.class(),
            Error::Oracle(e) => e.class(),
        }
    }
}
