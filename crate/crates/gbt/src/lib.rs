//! Gradient tree boosting for regression with squared-error loss, and exact
//! path-dependent tree SHAP attributions for the resulting ensembles.

pub mod analysis;
pub mod binning;
pub mod error;
pub mod grid;
pub mod matrix;
pub mod shap;
pub mod train;
pub mod tree;

pub use analysis::{
    color_separation, dependence_scan, group_importance, spearman, DependencePoint, FeatureGroup,
    GroupImportance, Separation,
};
pub use binning::{BinMapper, MAX_BINS_LIMIT};
pub use error::{GbtError, Result};
pub use grid::{grid_search, GridEntry, GridResult, GridSpec};
pub use matrix::{is_missing, FeatureMatrix, MISSING};
pub use shap::{shap_values, ShapExplanation, TreeExplainer};
pub use train::{train, BinningParams, HyperParams, IterationRecord, Prepared, Samples, TrainingLog};
pub use tree::{schema_hash, Node, Tree, TreeEnsemble};
