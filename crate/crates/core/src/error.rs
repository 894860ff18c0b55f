use thiserror::Error;

/// Errors raised by the numerical layers and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("control violation at step {step} on path {path}: {detail}")]
    ControlViolation {
        step: usize,
        path: usize,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("divergence at x0 = {x0:?}, t = {t}")]
    Divergence { x0: Vec<f64>, t: f64 },

    #[error("insufficient points: need at least {need}, have {have}")]
    InsufficientPoints { need: usize, have: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Argument(_) | Error::Unsupported(_) => 2,
            Error::Dimension { .. } => 2,
            Error::Numerical(_)
            | Error::Divergence { .. }
            | Error::ControlViolation { .. }
            | Error::InsufficientPoints { .. } => 3,
            Error::Io(_) => 3,
        }
    }
}
