use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const SOLVER: i32 = 4;
    pub const CONSISTENCY: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] frpt::Error),
}

impl CliError {
    pub fn config_file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        use frpt::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io(_) => exit::IO,
            CliError::Core(e) => match e.root() {
                _ if e.is_solver_failure() => exit::SOLVER,
                E::InvalidConfig(_) | E::LabelOutOfRange { .. } | E::MissingReconTargets => exit::CONFIG,
                E::ConfigMismatch(_) | E::ShapeMismatch(_) => exit::CONSISTENCY,
                _ => exit::IO,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
