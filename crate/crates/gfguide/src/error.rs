use std::fmt::Display;

use gfguide_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("remote reward failure: {0}")]
    Remote(String),
    #[error("io error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn config(field: &str, detail: impl Display) -> Self {
        HarnessError::Config(format!("field `{field}`: {detail}"))
    }

    /// Core errors raised while validating a configuration.
    pub fn from_core_config(e: Error) -> Self {
        match e {
            Error::InvalidConfig { field, reason } => Self::config(field, reason),
            other => HarnessError::Config(other.to_string()),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }

    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) | HarnessError::Io(_) => 3,
            HarnessError::Remote(_) => 4,
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::Reward(r) if r.is_remote() => HarnessError::Remote(r.to_string()),
            Error::InvalidConfig { field, reason } => Self::config(field, reason),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}
