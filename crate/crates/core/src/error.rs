use thiserror::Error;

/// Errors raised by the stand model, the schedule layer and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible state at stage {stage}, class {class}: {value}")]
    Infeasible { stage: usize, class: usize, value: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("size guard exceeded: {count} genotypes exceeds limit {limit}")]
    SizeGuard { count: u128, limit: u128 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ForestError {
    fn from(e: std::io::Error) -> Self {
        ForestError::Io(e.to_string())
    }
}

impl From<csv::Error> for ForestError {
    fn from(e: csv::Error) -> Self {
        ForestError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ForestError>;
