use std::fmt;

use liftseg::dataset::DatasetError;
use liftseg::geometry::GeometryError;
use liftseg::harness::HarnessError;
use liftseg::projection::{ProjectionError, RenderError};
use liftseg::segnet::SegNetError;

/// Failure of a command, split by who has to fix it.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing or malformed input files, invalid config.
    User(String),
    /// A fault in the program or a failed computation.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Model(m) => m.into(),
            e if e.is_user_error() => CliError::User(e.to_string()),
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SegNetError> for CliError {
    fn from(e: SegNetError) -> Self {
        match e {
            SegNetError::Tensor(_) => CliError::Internal(e.to_string()),
            e => CliError::User(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Encoding(_) => CliError::Internal(e.to_string()),
            e => CliError::User(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("serializing report: {e}"))
    }
}
