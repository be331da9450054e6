use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{DetectorKind, CRYSTAL_HEIGHT_MM, TILE_HALF_WIDTH_MM};

/// One triggered SiPM: timestamp plus the fired-SPAD counts of its four pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub sipm: u8,
    pub timestamp_ps: f64,
    pub counts: [u16; 4],
}

impl Hit {
    pub fn total_counts(&self) -> u32 {
        self.counts.iter().map(|&c| u32::from(c)).sum()
    }
}

/// Estimated interaction position. `doi` (depth from the entrance face) only
/// exists for the slab detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub doi: Option<f64>,
}

impl Position {
    /// Index on a regular grid over the tile with `dims` cells along x, y
    /// and optionally depth; x runs fastest. Out-of-range values clamp.
    pub fn voxel(&self, dims: &[usize]) -> usize {
        let bin = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
        };
        let ix = bin(self.x, -TILE_HALF_WIDTH_MM, TILE_HALF_WIDTH_MM, dims[0]);
        let iy = bin(self.y, -TILE_HALF_WIDTH_MM, TILE_HALF_WIDTH_MM, dims[1]);
        let mut idx = iy * dims[0] + ix;
        if dims.len() == 3 {
            let iz = bin(self.doi.unwrap_or(0.0), 0.0, CRYSTAL_HEIGHT_MM, dims[2]);
            idx += iz * dims[0] * dims[1];
        }
        idx
    }
}

/// Hits from one gamma interaction on one detector, ascending in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub detector: DetectorKind,
    pub hits: Vec<Hit>,
    pub energy_kev: Option<f64>,
    pub position: Option<Position>,
    pub total_photons: Option<f64>,
}

impl Cluster {
    pub fn new(detector: DetectorKind, hits: Vec<Hit>) -> Self {
        Self { detector, hits, energy_kev: None, position: None, total_photons: None }
    }

    pub fn first_timestamp(&self) -> Result<f64> {
        self.hits.first().map(|h| h.timestamp_ps).ok_or(CoreError::EmptyCluster)
    }

    pub fn sort_hits(&mut self) {
        self.hits.sort_by(|a, b| a.timestamp_ps.total_cmp(&b.timestamp_ps).then(a.sipm.cmp(&b.sipm)));
    }

    /// Pixel counts on the 64-pixel flat index `sipm * 4 + p`; `None` for
    /// SiPMs without a hit.
    pub fn pixel_map(&self) -> [Option<u16>; 64] {
        let mut m = [None; 64];
        for h in &self.hits {
            for (p, &c) in h.counts.iter().enumerate() {
                m[h.sipm as usize * 4 + p] = Some(c);
            }
        }
        m
    }
}

/// Injected effects for one detector side of a simulated event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    /// Channel skew of the SiPM that produced the first timestamp.
    pub skew_first_ps: f64,
    /// Timewalk of the first timestamp.
    pub timewalk_first_ps: f64,
    /// Interaction point x, y (mm) and depth below the entrance face (mm).
    pub interaction_mm: [f64; 3],
    pub energy_kev: f64,
    /// Gamma flight time from the source to the interaction point.
    pub travel_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    pub t0_ps: f64,
    pub slab: ClusterTruth,
    pub oto: ClusterTruth,
}

/// A slab cluster paired with a one-to-one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Coincidence {
    pub slab: Cluster,
    pub oto: Cluster,
    pub source_mm: [f64; 3],
    pub label_ps: f64,
    pub truth: Option<EventTruth>,
}

impl Coincidence {
    /// Slab first timestamp minus one-to-one first timestamp.
    pub fn delta_t_ps(&self) -> Result<f64> {
        Ok(self.slab.first_timestamp()? - self.oto.first_timestamp()?)
    }

    pub fn cluster(&self, kind: DetectorKind) -> &Cluster {
        match kind {
            DetectorKind::Slab => &self.slab,
            DetectorKind::OneToOne => &self.oto,
        }
    }

    pub fn cluster_mut(&mut self, kind: DetectorKind) -> &mut Cluster {
        match kind {
            DetectorKind::Slab => &mut self.slab,
            DetectorKind::OneToOne => &mut self.oto,
        }
    }

    /// Both estimated energies inside `[lo, hi]` keV; `None` accepts all.
    pub fn in_energy_window(&self, window: Option<(f64, f64)>) -> bool {
        let Some((lo, hi)) = window else { return true };
        [&self.slab, &self.oto]
            .iter()
            .all(|c| c.energy_kev.is_some_and(|e| e >= lo && e <= hi))
    }
}
