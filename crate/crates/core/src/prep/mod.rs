//! Clustering, coincidence pairing, saturation correction, noise filtering
//! and energy/position estimation.

mod cluster;
mod coincidence;
mod energy;
mod position;
mod saturation;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_hits, cluster_spans};
pub use coincidence::find_coincidences;
pub use energy::{calibrate_energy, find_photopeak, EnergyCalibration, VoxelPeaks, PHOTOPEAK_KEV};
pub use position::{max_pixel_position, pixel_feature_names, pixel_features, SlabPositionModel};
pub use saturation::{
    invert_saturation, passes_noise_filter, total_photons, PHOTON_FILTER_MAX, PHOTON_FILTER_MIN,
};

use crate::error::{CoreError, Result};
use crate::event::{Cluster, Coincidence, Hit};
use crate::geometry::{compute_label, DetectorKind, SPADS_PER_PIXEL, SPEED_OF_LIGHT_MM_PER_PS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub cluster_window_ps: f64,
    pub coincidence_window_ps: f64,
    pub photon_min: f64,
    pub photon_max: f64,
    pub n_spad: f64,
    pub c_mm_per_ps: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            cluster_window_ps: 40_000.0,
            coincidence_window_ps: 10_000.0,
            photon_min: PHOTON_FILTER_MIN,
            photon_max: PHOTON_FILTER_MAX,
            n_spad: SPADS_PER_PIXEL,
            c_mm_per_ps: SPEED_OF_LIGHT_MM_PER_PS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconStats {
    pub records: usize,
    pub slab_clusters: usize,
    pub oto_clusters: usize,
    pub pairs: usize,
    pub saturated: usize,
    pub noise_rejected: usize,
    pub kept: usize,
}

impl ReconStats {
    fn add(&mut self, o: &ReconStats) {
        self.records += o.records;
        self.slab_clusters += o.slab_clusters;
        self.oto_clusters += o.oto_clusters;
        self.pairs += o.pairs;
        self.saturated += o.saturated;
        self.noise_rejected += o.noise_rejected;
        self.kept += o.kept;
    }
}

/// Time-sorted hit stream of one detector with the record each hit came from.
fn flatten(records: &[Coincidence], kind: DetectorKind) -> Vec<(Hit, usize)> {
    let mut hits: Vec<(Hit, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.cluster(kind).hits.iter().map(move |h| (*h, i)))
        .collect();
    hits.sort_by(|a, b| a.0.timestamp_ps.total_cmp(&b.0.timestamp_ps).then(a.1.cmp(&b.1)));
    hits
}

fn clusters_of(hits: &[(Hit, usize)], kind: DetectorKind, window: f64) -> Result<Vec<(Cluster, usize)>> {
    let ts: Vec<f64> = hits.iter().map(|h| h.0.timestamp_ps).collect();
    Ok(cluster_spans(&ts, window)?
        .into_iter()
        .map(|r| {
            let origin = hits[r.start].1;
            (Cluster::new(kind, hits[r].iter().map(|h| h.0).collect()), origin)
        })
        .collect())
}

fn reconstruct_group(records: &[Coincidence], cfg: &PrepConfig) -> Result<(Vec<Coincidence>, ReconStats)> {
    let mut stats = ReconStats { records: records.len(), ..Default::default() };
    let slab = clusters_of(&flatten(records, DetectorKind::Slab), DetectorKind::Slab, cfg.cluster_window_ps)?;
    let oto = clusters_of(&flatten(records, DetectorKind::OneToOne), DetectorKind::OneToOne, cfg.cluster_window_ps)?;
    stats.slab_clusters = slab.len();
    stats.oto_clusters = oto.len();
    let first = |cs: &[(Cluster, usize)]| -> Vec<f64> { cs.iter().map(|c| c.0.hits[0].timestamp_ps).collect() };
    let pairs = find_coincidences(&first(&slab), &first(&oto), cfg.coincidence_window_ps);
    stats.pairs = pairs.len();
    let source = records.first().map_or([0.0; 3], |r| r.source_mm);
    let mut out = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let (mut s, so) = slab[i].clone();
        let (mut o, oo) = oto[j].clone();
        match (total_photons(&s, cfg.n_spad), total_photons(&o, cfg.n_spad)) {
            (Ok(ts), Ok(to)) => {
                s.total_photons = Some(ts);
                o.total_photons = Some(to);
            }
            _ => {
                stats.saturated += 1;
                continue;
            }
        }
        if !passes_noise_filter(&s, cfg.photon_min, cfg.photon_max)
            || !passes_noise_filter(&o, cfg.photon_min, cfg.photon_max)
        {
            stats.noise_rejected += 1;
            continue;
        }
        out.push(Coincidence {
            slab: s,
            oto: o,
            source_mm: source,
            label_ps: compute_label(source[2], cfg.c_mm_per_ps),
            truth: if so == oo { records[so].truth } else { None },
        });
    }
    stats.kept = out.len();
    Ok((out, stats))
}

/// Rebuilds coincidences from the raw hit streams of simulated or measured
/// records. Records sharing a source position form one acquisition; their
/// hits are merged per detector, re-clustered and re-paired, then passed
/// through saturation correction and the photon-count filter.
pub fn reconstruct(records: &[Coincidence], cfg: &PrepConfig) -> Result<(Vec<Coincidence>, ReconStats)> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].source_mm != records[start].source_mm {
            if i > start {
                groups.push(start..i);
            }
            start = i;
        }
    }
    let parts: Vec<(Vec<Coincidence>, ReconStats)> =
        groups.into_par_iter().map(|r| reconstruct_group(&records[r], cfg)).collect::<Result<_>>()?;
    let mut stats = ReconStats::default();
    let mut out = Vec::new();
    for (c, s) in parts {
        stats.add(&s);
        out.extend(c);
    }
    Ok((out, stats))
}

/// Assigns positions to both clusters. Coincidences whose position is
/// undefined are dropped; returns how many.
pub fn estimate_positions(coincs: &mut Vec<Coincidence>, slab_model: &SlabPositionModel) -> usize {
    let before = coincs.len();
    coincs.par_iter_mut().for_each(|c| {
        c.slab.position = slab_model.predict(&c.slab).ok();
        c.oto.position = max_pixel_position(&c.oto).ok();
    });
    coincs.retain(|c| c.slab.position.is_some() && c.oto.position.is_some());
    before - coincs.len()
}

/// Sets calibrated energies on both clusters.
pub fn estimate_energies(coincs: &mut [Coincidence], cal: &EnergyCalibration) -> Result<()> {
    coincs.par_iter_mut().try_for_each(|c| -> Result<()> {
        c.slab.energy_kev = Some(cal.estimate_energy(&c.slab)?);
        c.oto.energy_kev = Some(cal.estimate_energy(&c.oto)?);
        Ok(())
    })
}

/// Interaction points from simulator truth, for training the slab regressor.
pub fn slab_truth_pairs(coincs: &[Coincidence]) -> Result<Vec<(&Cluster, [f64; 3])>> {
    coincs
        .iter()
        .map(|c| {
            c.truth
                .map(|t| (&c.slab, t.slab.interaction_mm))
                .ok_or(CoreError::IncompleteCluster("simulation truth"))
        })
        .collect()
}
