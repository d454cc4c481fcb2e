use std::path::PathBuf;

use dynpanel_core::error::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dynpanel_core::Error),
    #[error("estimator '{estimator}' failed in {failures} of {replications} replications (first error: {first})")]
    FailureRate { estimator: String, failures: usize, replications: usize, first: String },
    #[error("scenario expectations failed: {}", .0.join("; "))]
    Expectations(Vec<String>),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    /// Process exit status: 2 configuration, 3 numerical, 4 failed expectations.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
            },
            HarnessError::FailureRate { .. } => 3,
            HarnessError::Expectations(_) => 4,
            HarnessError::Io { .. } | HarnessError::Json { .. } | HarnessError::Config(_) | HarnessError::Csv(_) => 2,
        }
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Core(e.into())
            }
        }
    )*};
}

core_from!(
    dynpanel_core::dgp::DgpError,
    dynpanel_core::estimators::EstimatorError,
    dynpanel_core::oracles::OracleError,
    dynpanel_core::panel::PanelError
);
