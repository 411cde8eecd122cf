use std::fmt;

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Schema or validation failure of the configuration (exit 2).
    Config(String),
    /// Missing or malformed input files (exit 3).
    Data(String),
    /// Failure while running a stage (exit 4).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hournas::Error> for CliError {
    fn from(e: hournas::Error) -> Self {
        use hournas::Error as E;
        let msg = e.to_string();
        match e {
            E::Data(_) | E::Io { .. } | E::Checkpoint(_) => CliError::Data(msg),
            E::UnreachableTarget { .. } | E::Space(_) | E::Inadmissible { .. } => CliError::Config(msg),
            _ => CliError::Runtime(msg),
        }
    }
}
