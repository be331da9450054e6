use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cluster has no hits")]
    EmptyCluster,
    #[error("cluster lacks {0} estimate")]
    IncompleteCluster(&'static str),
    #[error("hits are not time-sorted at index {index}")]
    SortOrder { index: usize },
    #[error("pixel count {count} is at or above the SPAD count {n_spad}")]
    SaturatedChannel { count: f64, n_spad: f64 },
    #[error("all pixel counts are zero; position undefined")]
    PositionUndefined,
    #[error("no populated calibration bins")]
    EmptyCalibration,
    #[error("fit did not converge: {0}")]
    FitDiverged(String),
    #[error("degenerate fit input: {0}")]
    FitDegenerate(String),
    #[error("not enough samples: {got} < {needed}")]
    TooFewSamples { got: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("linear system could not be solved: {0}")]
    Singular(String),
    #[error(transparent)]
    Gbt(#[from] tofcal_gbt::GbtError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
