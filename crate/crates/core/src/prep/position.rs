use tofcal_gbt::{train, BinningParams, FeatureMatrix, HyperParams, Samples, TreeEnsemble, MISSING};

use crate::error::{CoreError, Result};
use crate::event::{Cluster, Position};
use crate::geometry::{flat_pixel_center, N_PIXELS};

/// Center of the pixel with the most fired SPADs; ties go to the lowest
/// flat pixel index.
pub fn max_pixel_position(cluster: &Cluster) -> Result<Position> {
    let mut best: Option<(u16, usize)> = None;
    for (i, c) in cluster.pixel_map().iter().enumerate() {
        if let Some(c) = *c {
            if c > 0 && best.is_none_or(|(b, _)| c > b) {
                best = Some((c, i));
            }
        }
    }
    let (_, i) = best.ok_or(CoreError::PositionUndefined)?;
    let (x, y) = flat_pixel_center(i);
    Ok(Position { x, y, doi: None })
}

/// 64 pixel counts, `NaN` for pixels of SiPMs without a hit.
pub fn pixel_features(cluster: &Cluster) -> [f64; N_PIXELS] {
    let mut f = [MISSING; N_PIXELS];
    for (slot, c) in f.iter_mut().zip(cluster.pixel_map()) {
        if let Some(c) = c {
            *slot = f64::from(c);
        }
    }
    f
}

pub fn pixel_feature_names() -> Vec<String> {
    (0..N_PIXELS).map(|i| format!("pixel{i:02}")).collect()
}

/// One boosted regressor per slab coordinate (x, y, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct SlabPositionModel {
    pub x: TreeEnsemble,
    pub y: TreeEnsemble,
    pub doi: TreeEnsemble,
}

impl SlabPositionModel {
    /// Fits the three regressors on clusters with known interaction points
    /// `[x, y, depth]`; `valid` drives early stopping.
    pub fn train(
        train_set: &[(&Cluster, [f64; 3])],
        valid_set: &[(&Cluster, [f64; 3])],
        params: &HyperParams,
    ) -> Result<Self> {
        let to_matrix = |set: &[(&Cluster, [f64; 3])]| {
            let mut m = FeatureMatrix::with_capacity(N_PIXELS, set.len());
            for (c, _) in set {
                m.push_row(&pixel_features(c));
            }
            m
        };
        let (tx, vx) = (to_matrix(train_set), to_matrix(valid_set));
        let mut models = Vec::with_capacity(3);
        for axis in 0..3 {
            let ty: Vec<f64> = train_set.iter().map(|(_, t)| t[axis]).collect();
            let vy: Vec<f64> = valid_set.iter().map(|(_, t)| t[axis]).collect();
            let valid = if valid_set.is_empty() { None } else { Some(Samples::new(&vx, &vy)?) };
            let (m, log) = train(
                pixel_feature_names(),
                Samples::new(&tx, &ty)?,
                valid,
                BinningParams::default(),
                params,
            )?;
            log::info!("slab position axis {axis}: {} trees", log.best_n_trees);
            models.push(m);
        }
        let doi = models.pop().expect("three models");
        let y = models.pop().expect("three models");
        let x = models.pop().expect("three models");
        Ok(Self { x, y, doi })
    }

    pub fn predict(&self, cluster: &Cluster) -> Result<Position> {
        if cluster.hits.iter().all(|h| h.total_counts() == 0) {
            return Err(CoreError::PositionUndefined);
        }
        let f = pixel_features(cluster);
        let clamp = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
        Ok(Position {
            x: clamp(self.x.predict_unchecked(&f), -16.0, 16.0),
            y: clamp(self.y.predict_unchecked(&f), -16.0, 16.0),
            doi: Some(clamp(self.doi.predict_unchecked(&f), 0.0, crate::geometry::CRYSTAL_HEIGHT_MM)),
        })
    }
}
