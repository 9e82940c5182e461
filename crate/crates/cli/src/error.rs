use std::fmt;
use std::path::Path;

use ctxscope_core::Error as CoreError;

/// Process exit codes. Stable contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const CALIBRATION: i32 = 3;
    pub const SCHEMA: i32 = 4;
    pub const JOIN: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Calibration(String),
    Schema(String),
    Join(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Calibration(_) => exit::CALIBRATION,
            CliError::Schema(_) => exit::SCHEMA,
            CliError::Join(_) => exit::JOIN,
            CliError::Io(_) => exit::IO,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config error", m),
            CliError::Calibration(m) => ("calibration error", m),
            CliError::Schema(m) => ("schema error", m),
            CliError::Join(m) => ("join error", m),
            CliError::Io(m) => ("i/o error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Parameter(_) | CoreError::Range(_) => CliError::Config(msg),
            CoreError::Calibration(_) | CoreError::LinAlg(_) => CliError::Calibration(msg),
            CoreError::Schema(_)
            | CoreError::Data(_)
            | CoreError::Alignment(_)
            | CoreError::Dimension { .. }
            | CoreError::Undefined(_) => CliError::Schema(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
