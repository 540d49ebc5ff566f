use thiserror::Error;

/// Library-wide error type. Variants map onto the CLI exit codes:
/// configuration problems exit 1, runtime failures exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer stack: {0}")]
    InvalidStack(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("eigensolver failure: {0}")]
    EigenSolve(String),

    #[error("elliptic solve failure: {0}")]
    Elliptic(String),

    #[error("incompatible Neumann right-hand side (|rhs(1)| = {0:.3e} relative)")]
    IncompatibleRhs(f64),

    #[error("quadrature build failure: {0}")]
    Quadrature(String),

    #[error("field representation error: {0}")]
    Field(String),

    #[error("time stepping failure: {0}")]
    Stepper(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
