use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GbtError, Result};
use crate::train::{HyperParams, Prepared, TrainingLog};
use crate::tree::TreeEnsemble;

/// Depth by learning-rate grid on top of shared base parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub depths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub base: HyperParams,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            depths: vec![12, 15, 18, 20],
            learning_rates: vec![0.1, 0.3, 0.5],
            base: HyperParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridEntry {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub best_n_trees: usize,
    pub valid_mse: f64,
    #[serde(skip)]
    pub log: TrainingLog,
}

pub struct GridResult {
    pub entries: Vec<GridEntry>,
    pub best: usize,
    /// One model per entry, in grid order.
    pub models: Vec<TreeEnsemble>,
}

impl GridResult {
    pub fn best_model(&self) -> &TreeEnsemble {
        &self.models[self.best]
    }
}

/// Trains every grid point and keeps the model with the lowest validation
/// loss; ties go to the smaller depth, then the smaller learning rate.
pub fn grid_search(prepared: &Prepared<'_>, spec: &GridSpec) -> Result<GridResult> {
    let mut configs = Vec::new();
    for &d in &spec.depths {
        for &lr in &spec.learning_rates {
            configs.push(HyperParams { max_depth: d, learning_rate: lr, ..spec.base.clone() });
        }
    }
    if configs.is_empty() {
        return Err(GbtError::EmptyGrid);
    }
    let fits: Vec<(TreeEnsemble, TrainingLog)> =
        configs.par_iter().map(|p| prepared.fit(p)).collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(fits.len());
    let mut models = Vec::with_capacity(fits.len());
    for (p, (model, log)) in configs.iter().zip(fits) {
        let valid_mse = log
            .best_valid_mse
            .unwrap_or_else(|| log.iterations.last().map_or(f64::INFINITY, |r| r.train_mse));
        log::info!(
            "grid depth {} lr {}: {} trees, validation mse {valid_mse:.4}",
            p.max_depth,
            p.learning_rate,
            log.best_n_trees
        );
        entries.push(GridEntry {
            max_depth: p.max_depth,
            learning_rate: p.learning_rate,
            best_n_trees: log.best_n_trees,
            valid_mse,
            log,
        });
        models.push(model);
    }
    let best = (0..entries.len())
        .min_by(|&a, &b| {
            let (ea, eb) = (&entries[a], &entries[b]);
            ea.valid_mse
                .total_cmp(&eb.valid_mse)
                .then(ea.max_depth.cmp(&eb.max_depth))
                .then(ea.learning_rate.total_cmp(&eb.learning_rate))
        })
        .expect("non-empty grid");
    Ok(GridResult { entries, best, models })
}
