use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("solver diverged at time step {step}: {message}")]
    SolverDivergence { step: usize, message: String },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("improper distribution: {0}")]
    ImproperDistribution(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures raised by the forward model rather than by inputs
    /// or by the samplers.
    pub fn is_solver(&self) -> bool {
        matches!(self, Error::SolverDivergence { .. })
    }

    /// True for failures of the optimiser or samplers.
    pub fn is_inference(&self) -> bool {
        matches!(
            self,
            Error::FitFailure(_) | Error::ImproperDistribution(_) | Error::Numerical(_)
        )
    }
}
