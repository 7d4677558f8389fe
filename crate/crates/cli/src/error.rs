use std::fmt;

use conceptkit::eval::EvalError;
use conceptkit::mapping::MappingError;
use conceptkit::provider::{ConfigError, ProviderError};
use conceptkit::segmentation::{DatasetError, ModelError, TrainError};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    BadArgs(String),
    /// Exit 3.
    Dataset(String),
    /// Exit 4.
    Provider(String),
    /// Exit 1.
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::BadArgs(_) => 2,
            Self::Dataset(_) => 3,
            Self::Provider(_) => 4,
            Self::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadArgs(m) => write!(f, "{m}"),
            Self::Dataset(m) => write!(f, "dataset: {m}"),
            Self::Provider(m) => write!(f, "provider: {m}"),
            Self::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::Dataset(e.to_string())
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        Self::Provider(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::BadArgs(format!("provider config: {e}"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Other(e.into())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(d) => d.into(),
            TrainError::EmptySplit(_) => Self::Dataset(e.to_string()),
            TrainError::BadConfig(_) => Self::BadArgs(e.to_string()),
            other => Self::Other(other.into()),
        }
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::Provider(p) => p.into(),
            MappingError::Gold { .. } | MappingError::EmptyGold => Self::Dataset(e.to_string()),
            other => Self::Other(other.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Mapping(m) => m.into(),
            EvalError::Mask(_) | EvalError::Io(..) | EvalError::Empty | EvalError::Unmatched(_) => {
                Self::Dataset(e.to_string())
            }
            other => Self::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.into())
    }
}
