use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::{Cluster, Coincidence, Hit};
use crate::fitstat::{fit_gaussian, FitOptions};
use crate::geometry::{DetectorKind, N_SIPMS};

/// Calibration channels of one sub-calibration iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Voxelization {
    /// One channel per SiPM; every hit is corrected by its own SiPM.
    Sipm,
    /// Regular grids over the estimated interaction position: slab cells
    /// along (x, y, depth), one-to-one cells along (x, y).
    Spatial { slab: [usize; 3], oto: [usize; 2] },
}

impl Voxelization {
    pub fn n_channels(&self, kind: DetectorKind) -> usize {
        match (self, kind) {
            (Voxelization::Sipm, _) => N_SIPMS,
            (Voxelization::Spatial { slab, .. }, DetectorKind::Slab) => slab.iter().product(),
            (Voxelization::Spatial { oto, .. }, DetectorKind::OneToOne) => oto.iter().product(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Voxelization::Spatial { slab, oto } = self {
            if slab.iter().chain(oto).any(|&d| d == 0) {
                return Err(CoreError::Config("voxel grid dimensions must be positive".into()));
            }
        }
        Ok(())
    }

    /// Spatial channel of a cluster; `None` for SiPM channels or when the
    /// cluster has no position estimate.
    pub fn spatial_channel(&self, cluster: &Cluster) -> Option<usize> {
        let pos = cluster.position?;
        match (self, cluster.detector) {
            (Voxelization::Sipm, _) => None,
            (Voxelization::Spatial { slab, .. }, DetectorKind::Slab) => Some(pos.voxel(slab)),
            (Voxelization::Spatial { oto, .. }, DetectorKind::OneToOne) => Some(pos.voxel(oto)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDtOptions {
    /// Bins with fewer entries are excluded.
    pub min_events: usize,
    /// Bins with at least this many entries use a Gaussian-fit mean.
    pub fit_min_events: usize,
    /// Half width of the truncated mean in robust standard deviations.
    pub truncation_sigmas: f64,
}

impl Default for MeanDtOptions {
    fn default() -> Self {
        Self { min_events: 50, fit_min_events: 1000, truncation_sigmas: 3.0 }
    }
}

/// Label-compensated mean time difference of one slab/one-to-one channel pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMean {
    pub slab_channel: usize,
    pub oto_channel: usize,
    pub n: usize,
    pub mean_ps: f64,
    pub se_ps: f64,
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDt {
    pub bins: Vec<BinMean>,
    /// Populated bins dropped for having fewer than `min_events` entries.
    pub excluded_bins: usize,
    /// Coincidences without a usable channel assignment.
    pub skipped_events: usize,
}

fn truncated_mean(v: &mut [f64], k: f64) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let median = v[v.len() / 2];
    let mut dev: Vec<f64> = v.iter().map(|x| (x - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let robust = 1.482_602_218_505_602 * dev[dev.len() / 2];
    let kept: Vec<f64> = if robust > 0.0 {
        v.iter().copied().filter(|x| (x - median).abs() <= k * robust).collect()
    } else {
        v.to_vec()
    };
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = if kept.len() > 1 { kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Hit with the most fired SPADs; the earliest wins ties.
fn brightest_hit(cluster: &Cluster) -> Option<&Hit> {
    cluster.hits.iter().rev().max_by_key(|h| h.total_counts())
}

/// Collects `t_slab - t_oto - label` samples per channel pair.
///
/// SiPM channels pair the brightest hit of each side, so the selection does
/// not depend on the timestamps themselves; spatial channels use the first
/// timestamps.
pub fn collect_samples(coincs: &[Coincidence], vox: &Voxelization) -> (BTreeMap<(usize, usize), Vec<f64>>, usize) {
    let mut bins: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    for c in coincs {
        match vox {
            Voxelization::Sipm => {
                let (Some(hs), Some(ho)) = (brightest_hit(&c.slab), brightest_hit(&c.oto)) else {
                    skipped += 1;
                    continue;
                };
                bins.entry((hs.sipm as usize, ho.sipm as usize))
                    .or_default()
                    .push(hs.timestamp_ps - ho.timestamp_ps - c.label_ps);
            }
            Voxelization::Spatial { .. } => {
                let (Some(a), Some(b), Ok(dt)) = (vox.spatial_channel(&c.slab), vox.spatial_channel(&c.oto), c.delta_t_ps())
                else {
                    skipped += 1;
                    continue;
                };
                bins.entry((a, b)).or_default().push(dt - c.label_ps);
            }
        }
    }
    (bins, skipped)
}

pub fn estimate_mean_dt(coincs: &[Coincidence], vox: &Voxelization, opts: &MeanDtOptions) -> Result<MeanDt> {
    let (samples, skipped_events) = collect_samples(coincs, vox);
    let fit_opts = FitOptions { min_samples: opts.fit_min_events.max(3), ..FitOptions::default() };
    let mut bins = Vec::new();
    let mut excluded_bins = 0;
    for ((a, b), mut v) in samples {
        if v.len() < opts.min_events.max(1) {
            excluded_bins += 1;
            continue;
        }
        let n = v.len();
        let fit = if n >= opts.fit_min_events { fit_gaussian(&v, &fit_opts).ok() } else { None };
        let (mean_ps, se_ps, fitted) = match fit {
            Some(f) if f.mu_err > 0.0 => (f.mu, f.mu_err, true),
            _ => {
                let (m, se) = truncated_mean(&mut v, opts.truncation_sigmas);
                (m, se, false)
            }
        };
        bins.push(BinMean { slab_channel: a, oto_channel: b, n, mean_ps, se_ps, fitted });
    }
    if excluded_bins > 0 {
        warn!("{excluded_bins} channel pairs below {} events excluded", opts.min_events);
    }
    if bins.is_empty() {
        return Err(CoreError::EmptyCalibration);
    }
    Ok(MeanDt { bins, excluded_bins, skipped_events })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_mean_ignores_outliers() {
        let mut v: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        v.push(1e6);
        let (m, se) = truncated_mean(&mut v, 3.0);
        assert!((m - 4.5).abs() < 1e-12);
        assert!(se > 0.0);
    }

    #[test]
    fn channel_counts() {
        let v = Voxelization::Spatial { slab: [8, 4, 3], oto: [8, 8] };
        assert_eq!(v.n_channels(DetectorKind::Slab), 96);
        assert_eq!(v.n_channels(DetectorKind::OneToOne), 64);
        assert_eq!(Voxelization::Sipm.n_channels(DetectorKind::Slab), 16);
    }
}
