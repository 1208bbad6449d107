use thiserror::Error;

/// Errors produced by the simulator and protocol library.
#[derive(Debug, Error)]
pub enum AirconError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("deep fade for user {user} at subcarrier {position}")]
    DeepFade { user: usize, position: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AirconError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AirconError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AirconError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, AirconError>;
