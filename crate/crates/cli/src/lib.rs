//! Configuration, pipeline, verification and inspection behind the
//! `cocycle` command.

pub mod artifacts;
pub mod config;
pub mod inspect;
pub mod pipeline;
pub mod presets;
pub mod verify;

use config::{ConfigError, Stage};

/// Everything a command can fail with, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(ConfigError),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("spectrum is not hyperbolic: exponent {index} = {exponent:e} lies in the zero band")]
    NotHyperbolic { index: usize, exponent: f64 },
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl RunError {
    pub fn stage(stage: Stage, err: impl std::fmt::Display) -> Self {
        RunError::Stage { stage: stage.name(), message: err.to_string() }
    }

    pub fn io(err: impl std::fmt::Display) -> Self {
        RunError::Io(err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stage { .. } | RunError::Io(_) | RunError::VerifyFailed(_) => 3,
            RunError::NotHyperbolic { .. } => 4,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}
