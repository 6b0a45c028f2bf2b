use std::path::PathBuf;

/// Process exit codes of the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Pass = 0,
    PropertyFailure = 1,
    ConfigError = 2,
    NumericalFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// The more severe of two outcomes. A numerical failure outranks a
    /// property failure because its verdict could not be computed at all.
    pub fn worst(self, other: ExitStatus) -> ExitStatus {
        fn rank(s: ExitStatus) -> u8 {
            match s {
                ExitStatus::Pass => 0,
                ExitStatus::PropertyFailure => 1,
                ExitStatus::NumericalFailure => 2,
                ExitStatus::ConfigError => 3,
            }
        }
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }

    pub fn from_pass(pass: bool) -> ExitStatus {
        if pass {
            ExitStatus::Pass
        } else {
            ExitStatus::PropertyFailure
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TisoError {
    /// Invalid configuration; `field` is the dotted path of the offending entry.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl TisoError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        TisoError::Config { field: field.into(), message: message.into() }
    }

    pub fn numerical(e: impl std::fmt::Display) -> Self {
        TisoError::Numerical(e.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TisoError::Io { path: path.into(), source }
    }

    pub fn status(&self) -> ExitStatus {
        match self {
            // unreadable inputs and unwritable output directories both come
            // from paths named in the configuration
            TisoError::Config { .. } | TisoError::Io { .. } => ExitStatus::ConfigError,
            TisoError::Numerical(_) => ExitStatus::NumericalFailure,
        }
    }
}

pub type Result<T> = std::result::Result<T, TisoError>;
