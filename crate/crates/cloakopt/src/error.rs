use std::fmt;
use std::path::{Path, PathBuf};

/// Problem found while reading a configuration, mesh or design file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based line, when the problem can be pinned to one.
    pub line: Option<usize>,
    pub message: String,
}

impl ParseError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("solver error: {0}")]
    Solver(cloakopt_core::Error),
    #[error("audit failed: {0}")]
    Audit(String),
}

impl CliError {
    /// Process exit status: 2 for bad input, 3 for numerical or output
    /// failures, 4 for failed audits.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::Solver(_) | CliError::Write { .. } => 3,
            CliError::Audit(_) => 4,
        }
    }

    pub(crate) fn parse(path: &Path, source: ParseError) -> Self {
        CliError::Parse { path: path.to_path_buf(), source }
    }

    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write { path: path.to_path_buf(), source }
    }

    pub(crate) fn read(path: &Path, source: std::io::Error) -> Self {
        CliError::Read { path: path.to_path_buf(), source }
    }
}

impl From<cloakopt_core::Error> for CliError {
    /// Geometry and mesh problems are input errors; the rest are numerical.
    fn from(e: cloakopt_core::Error) -> Self {
        use cloakopt_core::Error as E;
        match e {
            E::Config(_) | E::InvalidMesh(_) | E::UnsupportedTopology(_) => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
