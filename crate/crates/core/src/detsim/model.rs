use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{DetectorKind, N_PIXELS, N_SIPMS, SPEED_OF_LIGHT_MM_PER_PS};
use crate::rng::{event_rng, STREAM_DETECTOR};

/// Light and trigger properties of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Mean detected photons for a 511 keV deposit.
    pub light_yield: f64,
    /// Photopeak FWHM over mean, including photon statistics.
    pub energy_resolution: f64,
    /// Relative light-collection spread between crystals (one-to-one) or
    /// across the slab volume.
    pub light_collection_sd: f64,
    /// Per-SiPM trigger threshold in incident photons, drawn once per SiPM.
    pub trigger_threshold_mean: f64,
    pub trigger_threshold_sd: f64,
}

/// Timing effects added to every hit timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewModel {
    /// Sigma of the fixed per-SiPM offsets.
    pub channel_skew_sd_ps: f64,
    /// Timewalk `a (N_ref / N)^b` of a SiPM with `N` incident photons.
    pub timewalk_amplitude_ps: f64,
    pub timewalk_reference_count: f64,
    pub timewalk_exponent: f64,
    /// Per-hit Gaussian jitter `sigma_ref sqrt(N_ref / N)`.
    pub jitter_reference_ps: f64,
    pub jitter_reference_count: f64,
    /// Per-event, per-detector Gaussian jitter shared by all hits.
    pub rise_jitter_ps: f64,
    /// Include depth-dependent gamma flight and optical transport times.
    pub doi_timing: bool,
}

impl SkewModel {
    pub fn timewalk_ps(&self, n_incident: f64) -> f64 {
        if self.timewalk_amplitude_ps == 0.0 {
            return 0.0;
        }
        self.timewalk_amplitude_ps
            * (self.timewalk_reference_count / n_incident.max(1.0)).powf(self.timewalk_exponent)
    }

    pub fn jitter_sigma_ps(&self, n_incident: f64) -> f64 {
        self.jitter_reference_ps * (self.jitter_reference_count / n_incident.max(1.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub slab: DetectorModel,
    pub oto: DetectorModel,
    pub skew: SkewModel,
    pub attenuation_length_mm: f64,
    pub refractive_index: f64,
    /// Fraction of deposits in the Compton continuum instead of the photopeak.
    pub compton_fraction: f64,
    pub compton_min_kev: f64,
    pub compton_max_kev: f64,
    /// Slab light spread along y: `sigma = base + slope * distance_to_sensor`.
    pub slab_spread_base_mm: f64,
    pub slab_spread_slope: f64,
    /// Share of slab light reaching the partner slab's pixel column.
    pub slab_partner_fraction: f64,
    /// Share of one-to-one light on the pixel under the hit crystal.
    pub oto_core_fraction: f64,
    pub c_mm_per_ps: f64,
    /// Mean spacing of events in time; far above the cluster window.
    pub event_spacing_ps: f64,
    /// Seed of the per-detector constants (skews, thresholds, light collection).
    pub detector_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slab: DetectorModel {
                light_yield: 2300.0,
                energy_resolution: 0.113,
                light_collection_sd: 0.05,
                trigger_threshold_mean: 54.0,
                trigger_threshold_sd: 19.0,
            },
            oto: DetectorModel {
                light_yield: 2800.0,
                energy_resolution: 0.104,
                light_collection_sd: 0.05,
                trigger_threshold_mean: 54.0,
                trigger_threshold_sd: 19.0,
            },
            skew: SkewModel {
                channel_skew_sd_ps: 100.0,
                timewalk_amplitude_ps: 300.0,
                timewalk_reference_count: 500.0,
                timewalk_exponent: 0.7,
                jitter_reference_ps: 45.0,
                jitter_reference_count: 500.0,
                rise_jitter_ps: 25.0,
                doi_timing: true,
            },
            attenuation_length_mm: 12.0,
            refractive_index: 1.82,
            compton_fraction: 0.35,
            compton_min_kev: 50.0,
            compton_max_kev: 340.0,
            slab_spread_base_mm: 1.0,
            slab_spread_slope: 0.35,
            slab_partner_fraction: 0.2,
            oto_core_fraction: 0.95,
            c_mm_per_ps: SPEED_OF_LIGHT_MM_PER_PS,
            event_spacing_ps: 1.0e6,
            detector_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("slab", &self.slab), ("oto", &self.oto)] {
            if !(d.light_yield > 0.0) {
                return Err(CoreError::Config(format!("sim.{name}.light_yield must be positive")));
            }
            if !(d.energy_resolution >= 0.0) || !(d.light_collection_sd >= 0.0) || !(d.trigger_threshold_sd >= 0.0) {
                return Err(CoreError::Config(format!("sim.{name}: resolutions and spreads must be >= 0")));
            }
        }
        let s = &self.skew;
        let sigmas = [s.channel_skew_sd_ps, s.jitter_reference_ps, s.rise_jitter_ps, s.timewalk_amplitude_ps];
        if sigmas.iter().any(|v| !(*v >= 0.0)) {
            return Err(CoreError::Config("sim.skew: sigmas and amplitudes must be >= 0".into()));
        }
        if !(s.timewalk_reference_count > 0.0 && s.jitter_reference_count > 0.0 && s.timewalk_exponent > 0.0) {
            return Err(CoreError::Config("sim.skew: reference counts and exponent must be positive".into()));
        }
        if !(self.attenuation_length_mm > 0.0 && self.refractive_index >= 1.0 && self.c_mm_per_ps > 0.0) {
            return Err(CoreError::Config("sim: attenuation length, refractive index or c invalid".into()));
        }
        if !(0.0..=1.0).contains(&self.compton_fraction)
            || !(0.0..=1.0).contains(&self.slab_partner_fraction)
            || !(0.0..=1.0).contains(&self.oto_core_fraction)
        {
            return Err(CoreError::Config("sim: fractions must lie in [0, 1]".into()));
        }
        if !(self.compton_min_kev > 0.0 && self.compton_max_kev > self.compton_min_kev) {
            return Err(CoreError::Config("sim: compton energy range invalid".into()));
        }
        if !(self.event_spacing_ps >= 1.0e5) {
            return Err(CoreError::Config("sim.event_spacing must be at least 100 ns".into()));
        }
        Ok(())
    }

    pub fn model(&self, kind: DetectorKind) -> &DetectorModel {
        match kind {
            DetectorKind::Slab => &self.slab,
            DetectorKind::OneToOne => &self.oto,
        }
    }
}

/// Constants drawn once per detector pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConstants {
    /// Fixed skew per SiPM, indexed `[detector][sipm]`.
    pub skews_ps: [[f64; N_SIPMS]; 2],
    pub thresholds: [[f64; N_SIPMS]; 2],
    /// Light-collection factor of each one-to-one crystal (flat pixel index).
    pub oto_light_collection: Vec<f64>,
}

impl DetectorConstants {
    pub fn draw(cfg: &SimConfig) -> Self {
        let mut rng = event_rng(cfg.detector_seed, STREAM_DETECTOR, 0);
        let skew = Normal::new(0.0, cfg.skew.channel_skew_sd_ps).expect("validated sigma");
        let mut skews_ps = [[0.0; N_SIPMS]; 2];
        let mut thresholds = [[0.0; N_SIPMS]; 2];
        for kind in [DetectorKind::Slab, DetectorKind::OneToOne] {
            let d = kind.index();
            let m = cfg.model(kind);
            let thr = Normal::new(m.trigger_threshold_mean, m.trigger_threshold_sd).expect("validated sigma");
            for k in 0..N_SIPMS {
                skews_ps[d][k] = skew.sample(&mut rng);
                thresholds[d][k] = thr.sample(&mut rng).max(1.0);
            }
        }
        let lc = Normal::new(1.0, cfg.oto.light_collection_sd).expect("validated sigma");
        let oto_light_collection = (0..N_PIXELS).map(|_| lc.sample(&mut rng).clamp(0.5, 1.5)).collect();
        Self { skews_ps, thresholds, oto_light_collection }
    }

    pub fn skew(&self, kind: DetectorKind, sipm: usize) -> f64 {
        self.skews_ps[kind.index()][sipm]
    }

    /// Replaces the per-SiPM skews.
    pub fn with_skews(mut self, slab: [f64; N_SIPMS], oto: [f64; N_SIPMS]) -> Self {
        self.skews_ps = [slab, oto];
        self
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
