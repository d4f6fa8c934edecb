use std::path::{Path, PathBuf};

use shm_kdme_core::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    /// A library error, tagged with the pipeline stage that raised it.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },

    #[error(transparent)]
    Core(#[from] Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 internal error, 2 invalid input, 3 format or version
    /// mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Stage { source, .. } | Self::Core(source) => core_exit_code(source),
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Io { source, .. } => io_exit_code(source),
        }
    }
}

fn io_exit_code(e: &std::io::Error) -> i32 {
    match e.kind() {
        std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData => 2,
        _ => 1,
    }
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Degenerate(_) | Error::OutOfValidity { .. } | Error::Parse { .. } => 2,
        Error::Format(_) | Error::Json(_) => 3,
        Error::Io(io) => io_exit_code(io),
        Error::IllConditioned { .. } | Error::Numerical(_) => 1,
    }
}

/// Attaches a stage name to library errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for Result<T, Error> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::InvalidInput("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::Format("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::Numerical("x".into())).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        let staged: Result<(), Error> = Err(Error::Format("bad".into()));
        let e = staged.stage("detect").unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(e.to_string(), "detect: format error: bad");
    }
}
