use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular system: zero pivot at row {row}")]
    Singular { row: usize },
    #[error("control field is not admissible: {0}")]
    Infeasible(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
