use hrn_core::contlearn::ContError;
use hrn_core::dataio::DataError;
use hrn_core::hrncore::HrnError;
use hrn_core::ndcompute::NdError;
use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn runtime(context: &str, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ContError> for CliError {
    fn from(e: ContError) -> Self {
        match e {
            ContError::Data(d) => d.into(),
            ContError::InvalidArgument(m) => CliError::Config(m),
            ContError::Hrn(HrnError::Config(m)) | ContError::Nd(NdError::InvalidArgument(m)) => CliError::Config(m),
            ContError::Hrn(HrnError::Checkpoint(m)) => CliError::Data(format!("checkpoint: {m}")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
