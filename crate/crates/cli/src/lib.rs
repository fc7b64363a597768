//! Command-line experiments on top of `scratchnet`: gradient-descent
//! scenarios, perceptron gates, the standard training tasks, text
//! generation and GAN training, each writing CSV/SVG/PGM artifacts and a
//! `run.json` manifest.

pub mod commands;
pub mod manifest;
pub mod pgm;
pub mod svg;
pub mod tasks;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scratchnet::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for bad arguments, 3 for a non-finite training loss, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(scratchnet::Error::InvalidArgument(_)) => 2,
            CliError::Core(scratchnet::Error::NonFiniteLoss { .. }) => 3,
            _ => 1,
        }
    }
}
