use adaptest_core::Error;
use adaptest_service::ServiceError;

pub const RUNTIME: u8 = 1;
pub const USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Ingest { .. }
            | Error::DatasetEmpty
            | Error::InsufficientStudents { .. }
            | Error::Partition(_)
            | Error::Config(_)
            | Error::CorruptCheckpoint(_)
            | Error::VersionMismatch { .. }
            | Error::QuestionCountMismatch { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => USAGE,
            _ => RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Engine(inner) => inner.into(),
            ServiceError::Startup(m) => Self::usage(m),
            other => Self::runtime(other.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
