use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or problem setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerically unusable input (non-finite values, overflow).
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("diverged at iteration {iteration}: timepoint {timepoint}, particle {particle} has a non-finite position")]
    Diverged {
        iteration: usize,
        timepoint: usize,
        particle: usize,
    },

    #[error("diverged at iteration {iteration}: bridge {interval} has marginal violation {violation:.3e}")]
    BridgeFailed {
        iteration: usize,
        interval: usize,
        violation: f64,
    },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration or input files,
    /// as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}
