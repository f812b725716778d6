use thiserror::Error;

/// Exit statuses.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_INFERENCE: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] acvolt::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: acvolt::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let core = match self {
            CliError::Core(e) | CliError::Context { source: e, .. } => e,
            _ => return EXIT_USAGE,
        };
        if core.is_solver() {
            EXIT_SOLVER
        } else if core.is_inference() {
            EXIT_INFERENCE
        } else {
            EXIT_USAGE
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for acvolt::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Context {
            context: context(),
            source,
        })
    }
}
