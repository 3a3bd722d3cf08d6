//! Configuration, model registry and stage runners behind the `galerkin`
//! binary.

pub mod config;
pub mod pipeline;
pub mod registry;

pub use config::RunConfig;
pub use pipeline::{run_mkv, run_pipeline, run_snse, Options, Stage, Status, Summary};

/// Exit code for unreadable or invalid configuration.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] galerkin_core::Error),
    #[error("io: {0}")]
    Io(String),
}

impl PipelineError {
    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }
}
