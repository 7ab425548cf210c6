//! Command implementations behind the `stopgate` binary.
//!
//! Exit codes: 0 success, 1 runtime or IO failure, 2 usage or validation
//! error, 3 the reproduction's ordering checks failed.

pub mod commands;
pub mod config;
pub mod io;
pub mod policy_spec;
pub mod repro;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Ordering(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Ordering(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    stopgate::cfgen::CfError,
    stopgate::eval::EvalError,
    stopgate::policy::PolicyError,
    stopgate::labeling::LabelingError,
    stopgate::labeling::ProviderError,
    stopgate::labeling::GradeError,
    stopgate::segment::SegmentError,
    stopgate::transport::TransportError
);
