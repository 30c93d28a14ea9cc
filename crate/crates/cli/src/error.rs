use std::fmt;

use flrq::io::IoError;
use flrq::FlrqError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Unreadable or malformed input, or an output that could not be written (exit 2).
    Data(String),
    /// The numerical core could not produce a result (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Prefixes the message with `context`, keeping the class.
    pub fn context(self, context: impl fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{context}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<FlrqError> for CliError {
    fn from(e: FlrqError) -> Self {
        match e {
            FlrqError::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            FlrqError::DimensionMismatch { .. }
            | FlrqError::NonFinite { .. }
            | FlrqError::Empty(_)
            | FlrqError::OracleTooLarge { .. } => CliError::Data(e.to_string()),
            FlrqError::ZeroMatrix | FlrqError::DegenerateProjection { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Numeric(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
