use std::path::PathBuf;

use tofcal_core::CoreError;
use tofcal_gbt::GbtError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed input {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Format { .. } | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::Config(_) => 2,
                CoreError::FitDiverged(_)
                | CoreError::FitDegenerate(_)
                | CoreError::Singular(_)
                | CoreError::EmptyCalibration
                | CoreError::TooFewSamples { .. } => 4,
                _ => 1,
            },
            CliError::Gbt(e) => match e {
                GbtError::InvalidParam(_) | GbtError::EmptyGrid => 2,
                _ => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
