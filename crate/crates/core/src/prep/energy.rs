use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{CoreError, Result};
use crate::event::{Cluster, Position};
use crate::geometry::DetectorKind;

pub const PHOTOPEAK_KEV: f64 = 511.0;

/// Photopeak location and width of a total-photon sample.
///
/// The mode of a smoothed histogram seeds the peak and its half-maximum
/// width seeds sigma. Two refinements then match a Gaussian to the samples
/// within +-1.5 sigma, correcting the truncated spread.
pub fn find_photopeak(values: &[f64]) -> Option<(f64, f64)> {
    let vals: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if vals.len() < 10 {
        return None;
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let n_bins = ((vals.len() as f64).sqrt() as usize).clamp(10, 200);
    let width = (hi - lo) / n_bins as f64;
    let mut hist = vec![0.0; n_bins];
    for v in &vals {
        hist[(((v - lo) / width) as usize).min(n_bins - 1)] += 1.0;
    }
    let smooth: Vec<f64> = (0..n_bins)
        .map(|i| {
            let a = i.saturating_sub(1);
            let b = (i + 1).min(n_bins - 1);
            hist[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect();
    let peak_bin = (0..n_bins).max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(a.cmp(&b)))?;
    let half = smooth[peak_bin] / 2.0;
    let mut l = peak_bin;
    while l > 0 && smooth[l] > half {
        l -= 1;
    }
    let mut r = peak_bin;
    while r + 1 < n_bins && smooth[r] > half {
        r += 1;
    }
    let mut mu = lo + (peak_bin as f64 + 0.5) * width;
    let mut sigma = ((r - l).max(1) as f64 * width / crate::geometry::FWHM_PER_SIGMA).max(width);

    let k: f64 = 1.5;
    let phi = (-0.5 * k * k).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = erf(k / std::f64::consts::SQRT_2);
    let shrink = (1.0 - 2.0 * k * phi / mass).sqrt();
    for _ in 0..2 {
        let (a, b) = (mu - k * sigma, mu + k * sigma);
        let inside: Vec<f64> = vals.iter().copied().filter(|v| *v >= a && *v <= b).collect();
        if inside.len() < 5 {
            return None;
        }
        let m = inside.iter().sum::<f64>() / inside.len() as f64;
        let var = inside.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (inside.len() - 1) as f64;
        mu = m;
        sigma = var.sqrt() / shrink;
    }
    (mu > 0.0 && sigma > 0.0).then_some((mu, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelPeaks {
    /// Voxel counts along x, y and (slab only) depth.
    pub dims: Vec<usize>,
    pub peaks: Vec<f64>,
    pub events: Vec<usize>,
    /// Voxels that use the global peak for lack of events.
    pub fallback: Vec<bool>,
    pub global_peak: f64,
}

impl VoxelPeaks {
    pub fn voxel(&self, pos: &Position) -> usize {
        pos.voxel(&self.dims)
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Per-voxel photopeak positions for both detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCalibration {
    pub version: u32,
    pub min_events: usize,
    pub slab: VoxelPeaks,
    pub oto: VoxelPeaks,
}

impl EnergyCalibration {
    pub fn peaks(&self, kind: DetectorKind) -> &VoxelPeaks {
        match kind {
            DetectorKind::Slab => &self.slab,
            DetectorKind::OneToOne => &self.oto,
        }
    }

    /// `511 keV * total / photopeak(voxel)`.
    pub fn estimate_energy(&self, cluster: &Cluster) -> Result<f64> {
        let total = cluster.total_photons.ok_or(CoreError::IncompleteCluster("photon total"))?;
        let pos = cluster.position.ok_or(CoreError::IncompleteCluster("position"))?;
        let vp = self.peaks(cluster.detector);
        Ok(PHOTOPEAK_KEV * total / vp.peaks[vp.voxel(&pos)])
    }
}

fn calibrate_side<'a>(
    clusters: impl Iterator<Item = &'a Cluster>,
    dims: Vec<usize>,
    min_events: usize,
) -> Result<VoxelPeaks> {
    let mut vp = VoxelPeaks { peaks: Vec::new(), events: Vec::new(), fallback: Vec::new(), global_peak: 0.0, dims };
    let n = vp.n_voxels();
    let mut per_voxel: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut all = Vec::new();
    for c in clusters {
        let (Some(total), Some(pos)) = (c.total_photons, c.position) else {
            return Err(CoreError::IncompleteCluster("photon total or position"));
        };
        per_voxel[vp.voxel(&pos)].push(total);
        all.push(total);
    }
    let (global, _) = find_photopeak(&all)
        .ok_or_else(|| CoreError::FitDegenerate("no photopeak found in energy spectrum".into()))?;
    vp.global_peak = global;
    let mut n_fallback = 0;
    for totals in &per_voxel {
        let peak = if totals.len() >= min_events { find_photopeak(totals).map(|p| p.0) } else { None };
        vp.events.push(totals.len());
        vp.fallback.push(peak.is_none());
        if peak.is_none() {
            n_fallback += 1;
        }
        vp.peaks.push(peak.unwrap_or(global));
    }
    if n_fallback > 0 {
        log::warn!("{n_fallback} of {n} energy voxels use the global photopeak");
    }
    Ok(vp)
}

/// Builds the voxel photopeak tables from clusters with positions and photon totals.
pub fn calibrate_energy<'a>(
    clusters: impl Iterator<Item = &'a Cluster> + Clone,
    slab_dims: [usize; 3],
    oto_dims: [usize; 2],
    min_events: usize,
) -> Result<EnergyCalibration> {
    if slab_dims.contains(&0) || oto_dims.contains(&0) {
        return Err(CoreError::Config("energy voxel grid dimensions must be positive".into()));
    }
    let slab = calibrate_side(clusters.clone().filter(|c| c.detector == DetectorKind::Slab), slab_dims.to_vec(), min_events)?;
    let oto = calibrate_side(clusters.filter(|c| c.detector == DetectorKind::OneToOne), oto_dims.to_vec(), min_events)?;
    Ok(EnergyCalibration { version: 1, min_events, slab, oto })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Uniform};

    #[test]
    fn photopeak_on_peak_plus_continuum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let peak = Normal::new(2800.0, 120.0).unwrap();
        let cont = Uniform::new(300.0, 1900.0).unwrap();
        let mut v: Vec<f64> = (0..6500).map(|_| peak.sample(&mut rng)).collect();
        v.extend((0..3500).map(|_| cont.sample(&mut rng)));
        let (mu, sigma) = find_photopeak(&v).unwrap();
        assert!((mu - 2800.0).abs() < 10.0, "{mu}");
        assert!((sigma - 120.0).abs() < 12.0, "{sigma}");
    }

    #[test]
    fn energy_scaling_anchor() {
        let vp = |dims: Vec<usize>| {
            let n: usize = dims.iter().product();
            VoxelPeaks { peaks: vec![2000.0; n], events: vec![0; n], fallback: vec![false; n], global_peak: 2000.0, dims }
        };
        let cal = EnergyCalibration { version: 1, min_events: 1, slab: vp(vec![8, 8, 5]), oto: vp(vec![8, 8]) };
        let mut c = Cluster::new(DetectorKind::OneToOne, vec![]);
        c.position = Some(Position { x: 0.0, y: 0.0, doi: None });
        c.total_photons = Some(2000.0);
        assert_eq!(cal.estimate_energy(&c).unwrap(), 511.0);
        c.total_photons = Some(1000.0);
        assert_eq!(cal.estimate_energy(&c).unwrap(), 255.5);
    }
}
