use std::fmt;
use std::process::ExitCode;

use lps_core::LpsError;

/// Failure classes with distinct process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Config => 2,
            Self::Data => 3,
            Self::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub source: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Config,
            source: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Data,
            source: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            source: err.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.exit_code())
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            source: self.source.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl From<LpsError> for CliError {
    fn from(e: LpsError) -> Self {
        let kind = match &e {
            LpsError::InvalidSpec(_) | LpsError::InvalidConfig(_) => ErrorKind::Config,
            LpsError::MissingManifest(_)
            | LpsError::CorruptRecord { .. }
            | LpsError::MissingFile(_)
            | LpsError::CheckpointMismatch { .. }
            | LpsError::ImageShape { .. }
            | LpsError::Serde { .. } => ErrorKind::Data,
            _ => ErrorKind::Runtime,
        };
        Self { kind, source: e.into() }
    }
}
