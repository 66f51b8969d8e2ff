use thiserror::Error;

/// Errors raised by the design, simulation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular least-squares system: {0}")]
    Singular(String),

    #[error("infeasible decomposition: {0}")]
    InfeasibleDecomposition(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that originate in the numerical kernels rather than
    /// in user input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::InfeasibleDecomposition(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
