use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid controlled Markov process: {}", .0.join("; "))]
    InvalidCmp(Vec<String>),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("state {state} has zero occupancy mass; its policy is undetermined")]
    UnreachableState { state: usize },

    #[error("linear solve failed ({what}); condition estimate {condition:.3e}")]
    Singular { what: &'static str, condition: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("optimization diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
