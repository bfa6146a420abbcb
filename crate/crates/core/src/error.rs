use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Parameters or service state are not usable (non-finite weights, no pending answer, ...).
    #[error("invalid state: {0}")]
    State(String),

    #[error("operation requires {required} mode")]
    UnsupportedMode { required: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}{}", round.map(|r| format!(" of round {r}")).unwrap_or_default())]
    Diverged { step: usize, round: Option<usize> },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than runtime failure.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Config(_) | Error::Ingestion(_) | Error::UnsupportedMode { .. }
        )
    }
}
