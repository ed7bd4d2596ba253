use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate mode: {0}")]
    Degenerate(String),
    #[error("mode pairing failed: {0}")]
    Pairing(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("step size too large: {0}")]
    StepSize(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
