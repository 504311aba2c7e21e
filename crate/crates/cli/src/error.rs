use std::fmt;
use std::path::Path;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1.
    Io(String),
    /// Exit 2.
    Validation(String),
    /// Exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Validation(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<sensor_noise::Error> for CliError {
    fn from(e: sensor_noise::Error) -> Self {
        match e {
            sensor_noise::Error::Io { .. } => CliError::Io(e.to_string()),
            sensor_noise::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Fails with a validation error naming `path` unless it is a directory.
pub fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::invalid(format!(
            "{what} directory not found: {}",
            path.display()
        )))
    }
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::invalid(format!("{what} file not found: {}", path.display())))
    }
}
