use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] emonext::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{0} gradient check(s) failed")]
    GradcheckFailed(usize),
}

pub type Result<T> = std::result::Result<T, CliError>;
