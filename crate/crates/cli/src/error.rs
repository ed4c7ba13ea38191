use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] tzpc::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 1 check failure, 2 config error, 3 missing prerequisite,
    /// 4 runtime or solver error.
    pub fn exit_code(&self) -> u8 {
        use tzpc::Error as E;
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Io { .. } | CliError::Artifact { .. } | CliError::Runtime(_) => 4,
            CliError::Core(e) => match e {
                E::RankDeficient { .. }
                | E::LyapunovFailed { .. }
                | E::Unstable(_)
                | E::Unstabilizable(_)
                | E::RpiNotFound { .. }
                | E::SetpointInfeasible { .. }
                | E::EmptySet(_) => 1,
                _ => 4,
            },
        }
    }
}
