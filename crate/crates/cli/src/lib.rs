//! Offline driver and HTTP service for the insight pipeline.

pub mod commands;
pub mod server;

use std::path::PathBuf;

use insight_core::bundle::BundleError;
use insight_core::config::ConfigError;
use insight_core::datagen::DatagenError;
use insight_core::ingest::IngestError;
use insight_core::pipeline::PipelineError;
use insight_core::synthesizer::compose::ComposeError;
use thiserror::Error;

/// Process exit status for each error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Validation = 2,
    Io = 3,
    Backend = 4,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error("backend health check failed: {0}")]
    Health(ComposeError),
    #[error("{} violation(s) in {}", .violations.len(), .path.display())]
    Invalid {
        path: PathBuf,
        violations: Vec<String>,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use ExitCode::*;
        match self {
            CliError::Config(ConfigError::Io { .. }) => Io,
            CliError::Config(_) | CliError::Invalid { .. } | CliError::Usage(_) => Validation,
            CliError::Health(_) => Backend,
            CliError::Io { .. } => Io,
            CliError::Bundle(e) => bundle_code(e),
            CliError::Datagen(DatagenError::Io { .. }) => Io,
            CliError::Datagen(DatagenError::InvalidSpec(_)) => Validation,
            CliError::Pipeline(e) => match e {
                PipelineError::Ingest(e) => ingest_code(e),
                PipelineError::Bundle(e) => bundle_code(e),
                PipelineError::Backend(_) => Backend,
                _ => Validation,
            },
        }
    }
}

fn ingest_code(e: &IngestError) -> ExitCode {
    match e {
        IngestError::MissingFile(_) | IngestError::Io { .. } => ExitCode::Io,
        _ => ExitCode::Validation,
    }
}

fn bundle_code(e: &BundleError) -> ExitCode {
    match e {
        BundleError::Io { .. } => ExitCode::Io,
        _ => ExitCode::Validation,
    }
}
