use dhpsf::aberration::AberrationError;
use dhpsf::calibration::CalibrationError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unidentifiable fit: {0}")]
    Unidentifiable(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// One-line JSON record written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub status: &'a str,
    pub kind: &'a str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Unidentifiable(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Unidentifiable(_) => "unidentifiable",
        }
    }

    pub fn record(&self) -> ErrorRecord<'_> {
        ErrorRecord { status: "error", kind: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }
}

impl From<dhpsf::Error> for CliError {
    fn from(e: dhpsf::Error) -> Self {
        match e {
            dhpsf::Error::Io(e) => CliError::Io(e.to_string()),
            dhpsf::Error::Calibration(CalibrationError::Unidentifiable) => CliError::Unidentifiable(e.to_string()),
            dhpsf::Error::Aberration(AberrationError::InvalidInput(m)) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<dhpsf::io::IoError> for CliError {
    fn from(e: dhpsf::io::IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Library errors from modules without their own `From` impl.
pub fn numeric<E: Into<dhpsf::Error>>(e: E) -> CliError {
    e.into().into()
}
