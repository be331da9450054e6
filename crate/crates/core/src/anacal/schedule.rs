use log::info;
use serde::{Deserialize, Serialize};

use crate::anacal::bins::{estimate_mean_dt, MeanDtOptions, Voxelization};
use crate::anacal::solve::{build_matrix, solve_corrections, Corrections};
use crate::error::{CoreError, Result};
use crate::event::{Cluster, Coincidence};
use crate::fitstat::{ctr_fwhm, fit_gaussian, FitOptions};
use crate::geometry::{DetectorKind, N_SIPMS};

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    pub iteration: usize,
    pub voxelization: Voxelization,
    pub corrections: Corrections,
    pub n_bins: usize,
    pub excluded_bins: usize,
}

impl CalibrationSolution {
    /// Time subtracted from hits of `kind` in channel `channel`, including
    /// the detector's half of the inter-detector offset.
    pub fn correction(&self, kind: DetectorKind, channel: usize) -> f64 {
        let h = self.corrections.inter_detector_offset_ps / 2.0;
        match kind {
            DetectorKind::Slab => self.corrections.slab_ps[channel] + h,
            DetectorKind::OneToOne => self.corrections.oto_ps[channel] - h,
        }
    }

    fn apply_cluster(&self, cluster: &mut Cluster) {
        let kind = cluster.detector;
        match self.voxelization {
            Voxelization::Sipm => {
                for h in &mut cluster.hits {
                    h.timestamp_ps -= self.correction(kind, h.sipm as usize);
                }
            }
            Voxelization::Spatial { .. } => {
                let shift = match self.voxelization.spatial_channel(cluster) {
                    Some(ch) => self.correction(kind, ch),
                    None => {
                        let h = self.corrections.inter_detector_offset_ps / 2.0;
                        if kind == DetectorKind::Slab { h } else { -h }
                    }
                };
                for h in &mut cluster.hits {
                    h.timestamp_ps -= shift;
                }
            }
        }
        cluster.sort_hits();
    }

    pub fn apply(&self, coincs: &mut [Coincidence]) {
        for c in coincs {
            self.apply_cluster(&mut c.slab);
            self.apply_cluster(&mut c.oto);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: Vec<Voxelization>,
    pub mean: MeanDtOptions,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: vec![
                Voxelization::Sipm,
                Voxelization::Spatial { slab: [8, 4, 1], oto: [4, 4] },
                Voxelization::Spatial { slab: [8, 4, 3], oto: [8, 8] },
            ],
            mean: MeanDtOptions::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() {
            return Err(CoreError::Config("calibration schedule has no iterations".into()));
        }
        self.iterations.iter().try_for_each(Voxelization::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub n_bins: usize,
    pub max_abs_correction_ps: f64,
    pub inter_detector_offset_ps: f64,
    /// FWHM of `dt - label` after applying this iteration.
    pub ctr_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalCalibration {
    pub version: u32,
    pub schedule: Schedule,
    pub solutions: Vec<CalibrationSolution>,
    /// CTR before any correction.
    pub initial_ctr_ps: Option<f64>,
    pub reports: Vec<IterationReport>,
}

impl AnalyticalCalibration {
    pub fn apply(&self, coincs: &mut [Coincidence]) {
        for s in &self.solutions {
            s.apply(coincs);
        }
    }

    /// Summed zero-mean per-SiPM corrections of all SiPM iterations, i.e.
    /// the estimated channel skews of one detector up to a common constant.
    pub fn sipm_skews(&self, kind: DetectorKind) -> [f64; N_SIPMS] {
        let mut out = [0.0; N_SIPMS];
        for s in self.solutions.iter().filter(|s| s.voxelization == Voxelization::Sipm) {
            let c = match kind {
                DetectorKind::Slab => &s.corrections.slab_ps,
                DetectorKind::OneToOne => &s.corrections.oto_ps,
            };
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }
}

/// FWHM of the label-compensated time difference, if a Gaussian fits.
pub fn residual_ctr(coincs: &[Coincidence]) -> Option<f64> {
    let r: Vec<f64> = coincs.iter().filter_map(|c| c.delta_t_ps().ok().map(|d| d - c.label_ps)).collect();
    fit_gaussian(&r, &FitOptions::default()).ok().map(|f| ctr_fwhm(&f).0)
}

/// One sub-calibration: bin means, matrix, solve.
pub fn solve_iteration(
    coincs: &[Coincidence],
    vox: &Voxelization,
    opts: &MeanDtOptions,
    iteration: usize,
) -> Result<CalibrationSolution> {
    let means = estimate_mean_dt(coincs, vox, opts)?;
    let pairs: Vec<(usize, usize)> = means.bins.iter().map(|b| (b.slab_channel, b.oto_channel)).collect();
    let m = build_matrix(&pairs, vox.n_channels(DetectorKind::Slab), vox.n_channels(DetectorKind::OneToOne))?;
    let dt: Vec<f64> = means.bins.iter().map(|b| b.mean_ps).collect();
    // Floor the standard error so a degenerate bin cannot dominate.
    let w: Vec<f64> = means.bins.iter().map(|b| 1.0 / b.se_ps.max(1e-3).powi(2)).collect();
    let corrections = solve_corrections(&m, &dt, &w)?;
    Ok(CalibrationSolution {
        iteration,
        voxelization: *vox,
        corrections,
        n_bins: means.bins.len(),
        excluded_bins: means.excluded_bins,
    })
}

/// Runs every iteration of the schedule, applying each solution to the
/// timestamps before the next one.
pub fn run_subcalibration_schedule(coincs: &mut [Coincidence], schedule: &Schedule) -> Result<AnalyticalCalibration> {
    schedule.validate()?;
    let initial_ctr_ps = residual_ctr(coincs);
    let mut solutions = Vec::new();
    let mut reports = Vec::new();
    for (i, vox) in schedule.iterations.iter().enumerate() {
        let sol = solve_iteration(coincs, vox, &schedule.mean, i + 1)?;
        sol.apply(coincs);
        let report = IterationReport {
            iteration: i + 1,
            n_bins: sol.n_bins,
            max_abs_correction_ps: sol.corrections.max_abs(),
            inter_detector_offset_ps: sol.corrections.inter_detector_offset_ps,
            ctr_ps: residual_ctr(coincs),
        };
        info!(
            "calibration iteration {}: {} bins, max |c| {:.2} ps, CTR {:?}",
            report.iteration, report.n_bins, report.max_abs_correction_ps, report.ctr_ps
        );
        reports.push(report);
        solutions.push(sol);
    }
    Ok(AnalyticalCalibration {
        version: CALIBRATION_VERSION,
        schedule: schedule.clone(),
        solutions,
        initial_ctr_ps,
        reports,
    })
}
