//! Pipeline orchestration, configuration and file formats.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
