use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Contract(_)
                | Error::Split(_)
                | Error::Config(_)
                | Error::Lookup(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
