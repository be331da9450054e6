use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature vector has {got} entries, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("model schema hash {found} does not match expected {expected}")]
    SchemaHash { expected: String, found: String },
    #[error("labels ({labels}) and feature rows ({rows}) differ in length")]
    LabelCount { labels: usize, rows: usize },
    #[error("label {index} is not finite")]
    NonFiniteLabel { index: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("no explanations given")]
    EmptyBatch,
    #[error("feature index {index} out of range ({n_features} features)")]
    FeatureIndex { index: usize, n_features: usize },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GbtError>;
