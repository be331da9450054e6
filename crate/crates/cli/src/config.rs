//! Flat `dotted.key = value [unit]` configuration.
//!
//! Lines starting with `#` are comments. Physical quantities must carry a
//! unit; times are stored in ps, lengths in mm and energies in keV.

use std::path::Path;

use tofcal_core::anacal::{MeanDtOptions, Schedule, Voxelization};
use tofcal_core::detsim::{CampaignPlan, SimConfig};
use tofcal_core::prep::PrepConfig;
use tofcal_gbt::{BinningParams, GridSpec, HyperParams};

use crate::error::{CliError, Result};

/// Energy window applied to both clusters; `range: None` accepts all.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWindow {
    pub name: String,
    pub range: Option<(f64, f64)>,
}

impl EnergyWindow {
    pub fn all() -> Self {
        Self { name: "all".into(), range: None }
    }

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { name: format!("{lo}-{hi}"), range: Some((lo, hi)) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub slab_voxels: [usize; 3],
    pub oto_voxels: [usize; 2],
    pub min_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionConfig {
    pub params: HyperParams,
    /// Training clusters are capped at this count, taken in dataset order.
    pub max_train_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    pub grid: GridSpec,
    pub binning: BinningParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub windows: Vec<EnergyWindow>,
    pub linearity_z_mm: (f64, f64),
    pub z_uncertainty_mm: f64,
    pub min_fit_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    pub samples: usize,
    pub seed: u64,
    pub dependence_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub campaign: CampaignPlan,
    pub prep: PrepConfig,
    pub energy: EnergyConfig,
    pub position: PositionConfig,
    pub calibration: Schedule,
    pub boost: BoostConfig,
    pub evaluation: EvaluationConfig,
    pub explain: ExplainConfig,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            campaign: CampaignPlan::default(),
            prep: PrepConfig::default(),
            energy: EnergyConfig { slab_voxels: [8, 8, 5], oto_voxels: [8, 8], min_events: 100 },
            position: PositionConfig {
                params: HyperParams { max_depth: 8, n_estimators: 200, ..HyperParams::default() },
                max_train_events: 20_000,
            },
            calibration: Schedule::default(),
            boost: BoostConfig { grid: GridSpec::default(), binning: BinningParams::default() },
            evaluation: EvaluationConfig {
                windows: vec![EnergyWindow::all(), EnergyWindow::new(300.0, 700.0), EnergyWindow::new(450.0, 550.0)],
                linearity_z_mm: (-75.0, 45.0),
                z_uncertainty_mm: 0.1,
                min_fit_samples: 1000,
            },
            explain: ExplainConfig { samples: 100_000, seed: 7, dependence_bins: 20 },
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Dim {
    Time,
    Length,
    Energy,
    Speed,
}

fn unit_factor(dim: Dim, unit: &str) -> Option<f64> {
    Some(match (dim, unit) {
        (Dim::Time, "ps") => 1.0,
        (Dim::Time, "ns") => 1e3,
        (Dim::Time, "us") => 1e6,
        (Dim::Length, "mm") => 1.0,
        (Dim::Length, "cm") => 10.0,
        (Dim::Length, "m") => 1e3,
        (Dim::Energy, "keV") => 1.0,
        (Dim::Energy, "MeV") => 1e3,
        (Dim::Speed, "mm/ps") => 1.0,
        _ => return None,
    })
}

fn dim_name(dim: Dim) -> &'static str {
    match dim {
        Dim::Time => "time (ps, ns, us)",
        Dim::Length => "length (mm, cm, m)",
        Dim::Energy => "energy (keV, MeV)",
        Dim::Speed => "speed (mm/ps)",
    }
}

/// Splits `"1, 2, 3 mm"` into the numeric part and its unit.
fn split_unit(value: &str) -> (&str, Option<&str>) {
    let v = value.trim();
    match v.rfind(|c: char| c.is_whitespace()) {
        Some(i) if v[i + 1..].chars().next().is_some_and(|c| c.is_alphabetic()) => (v[..i].trim(), Some(&v[i + 1..])),
        _ => (v, None),
    }
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

impl Entry<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("line {}: `{}`: {msg}", self.line, self.key))
    }

    fn plain(&self) -> Result<&str> {
        match split_unit(self.value) {
            (v, None) => Ok(v),
            (_, Some(u)) => Err(self.err(format!("takes no unit, got `{u}`"))),
        }
    }

    fn number(&self, s: &str) -> Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| self.err(format!("`{s}` is not a number")))?;
        if v.is_finite() { Ok(v) } else { Err(self.err("value must be finite")) }
    }

    fn float(&self) -> Result<f64> {
        self.number(self.plain()?)
    }

    fn usize(&self) -> Result<usize> {
        let s = self.plain()?;
        s.parse().map_err(|_| self.err(format!("`{s}` is not a non-negative integer")))
    }

    fn u64(&self) -> Result<u64> {
        let s = self.plain()?;
        s.parse().map_err(|_| self.err(format!("`{s}` is not a non-negative integer")))
    }

    fn bool(&self) -> Result<bool> {
        match self.plain()? {
            "true" => Ok(true),
            "false" => Ok(false),
            s => Err(self.err(format!("`{s}` is not true or false"))),
        }
    }

    fn scaled(&self, dim: Dim) -> Result<(&str, f64)> {
        let (v, unit) = split_unit(self.value);
        let unit = unit.ok_or_else(|| self.err(format!("missing unit, expected {}", dim_name(dim))))?;
        let f = unit_factor(dim, unit).ok_or_else(|| self.err(format!("unit `{unit}` is not a {}", dim_name(dim))))?;
        Ok((v, f))
    }

    fn quantity(&self, dim: Dim) -> Result<f64> {
        let (v, f) = self.scaled(dim)?;
        Ok(self.number(v)? * f)
    }

    /// Comma list, or `start:stop:step` with both ends included.
    fn quantity_list(&self, dim: Dim) -> Result<Vec<f64>> {
        let (v, f) = self.scaled(dim)?;
        let parts: Vec<&str> = v.split(':').collect();
        let values = if parts.len() == 3 {
            let (a, b, s) = (self.number(parts[0])?, self.number(parts[1])?, self.number(parts[2])?);
            if !(s > 0.0) || b < a {
                return Err(self.err("range needs start <= stop and a positive step"));
            }
            let n = ((b - a) / s + 1e-9).floor() as usize;
            (0..=n).map(|i| a + s * i as f64).collect()
        } else {
            v.split(',').map(|p| self.number(p)).collect::<Result<Vec<_>>>()?
        };
        if values.is_empty() {
            return Err(self.err("empty list"));
        }
        Ok(values.into_iter().map(|x| x * f).collect())
    }

    fn float_list(&self) -> Result<Vec<f64>> {
        self.plain()?.split(',').map(|p| self.number(p)).collect()
    }

    fn usize_list(&self) -> Result<Vec<usize>> {
        self.plain()?
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| self.err(format!("`{p}` is not a non-negative integer"))))
            .collect()
    }

    fn dims<const N: usize>(&self, s: &str) -> Result<[usize; N]> {
        let v: Vec<usize> = s
            .trim()
            .split('x')
            .map(|p| p.trim().parse().map_err(|_| self.err(format!("`{s}` is not a grid like 8x4x3"))))
            .collect::<Result<_>>()?;
        v.try_into().map_err(|_| self.err(format!("`{s}` needs {N} dimensions")))
    }

    fn windows(&self) -> Result<Vec<EnergyWindow>> {
        self.value.split(';').map(|w| parse_window(w).map_err(|m| self.err(m))).collect()
    }

    fn schedule(&self) -> Result<Vec<Voxelization>> {
        self.plain()?
            .split(',')
            .map(|it| {
                let it = it.trim();
                if it == "sipm" {
                    return Ok(Voxelization::Sipm);
                }
                let (s, o) = it.split_once('/').ok_or_else(|| self.err(format!("`{it}` is not sipm or SLAB/OTO")))?;
                Ok(Voxelization::Spatial { slab: self.dims(s)?, oto: self.dims(o)? })
            })
            .collect()
    }
}

/// `all` or `LO,HI keV`; a bare `LO,HI` is read as keV.
pub fn parse_window(text: &str) -> std::result::Result<EnergyWindow, String> {
    let t = text.trim();
    if t == "all" {
        return Ok(EnergyWindow::all());
    }
    let (v, unit) = split_unit(t);
    let f = match unit {
        None => 1.0,
        Some(u) => unit_factor(Dim::Energy, u).ok_or_else(|| format!("unit `{u}` is not an energy"))?,
    };
    let (lo, hi) = v.split_once(',').ok_or_else(|| format!("window `{t}` is not `all` or LO,HI"))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    let (lo, hi) = (parse(lo)? * f, parse(hi)? * f);
    if !(lo < hi) {
        return Err(format!("window `{t}` needs LO < HI"));
    }
    Ok(EnergyWindow::new(lo, hi))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
            _ => CliError::io(path, e),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(&Entry { key: key.trim(), value: value.trim(), line: i + 1 })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, e: &Entry) -> Result<()> {
        let s = &mut self.sim;
        match e.key {
            "seed" => {
                let v = e.u64()?;
                self.campaign.seed = v;
                s.detector_seed = v;
            }
            "threads" => self.threads = e.usize()?,
            "sim.detector_seed" => s.detector_seed = e.u64()?,
            "sim.slab.light_yield" => s.slab.light_yield = e.float()?,
            "sim.slab.energy_resolution" => s.slab.energy_resolution = e.float()?,
            "sim.slab.light_collection_sd" => s.slab.light_collection_sd = e.float()?,
            "sim.slab.trigger_threshold_mean" => s.slab.trigger_threshold_mean = e.float()?,
            "sim.slab.trigger_threshold_sd" => s.slab.trigger_threshold_sd = e.float()?,
            "sim.slab.spread_base" => s.slab_spread_base_mm = e.quantity(Dim::Length)?,
            "sim.slab.spread_slope" => s.slab_spread_slope = e.float()?,
            "sim.slab.partner_fraction" => s.slab_partner_fraction = e.float()?,
            "sim.oto.light_yield" => s.oto.light_yield = e.float()?,
            "sim.oto.energy_resolution" => s.oto.energy_resolution = e.float()?,
            "sim.oto.light_collection_sd" => s.oto.light_collection_sd = e.float()?,
            "sim.oto.trigger_threshold_mean" => s.oto.trigger_threshold_mean = e.float()?,
            "sim.oto.trigger_threshold_sd" => s.oto.trigger_threshold_sd = e.float()?,
            "sim.oto.core_fraction" => s.oto_core_fraction = e.float()?,
            "sim.skew.channel_sd" => s.skew.channel_skew_sd_ps = e.quantity(Dim::Time)?,
            "sim.timewalk.amplitude" => s.skew.timewalk_amplitude_ps = e.quantity(Dim::Time)?,
            "sim.timewalk.reference_count" => s.skew.timewalk_reference_count = e.float()?,
            "sim.timewalk.exponent" => s.skew.timewalk_exponent = e.float()?,
            "sim.jitter.reference" => s.skew.jitter_reference_ps = e.quantity(Dim::Time)?,
            "sim.jitter.reference_count" => s.skew.jitter_reference_count = e.float()?,
            "sim.rise_jitter" => s.skew.rise_jitter_ps = e.quantity(Dim::Time)?,
            "sim.doi_timing" => s.skew.doi_timing = e.bool()?,
            "sim.attenuation_length" => s.attenuation_length_mm = e.quantity(Dim::Length)?,
            "sim.refractive_index" => s.refractive_index = e.float()?,
            "sim.compton.fraction" => s.compton_fraction = e.float()?,
            "sim.compton.min_energy" => s.compton_min_kev = e.quantity(Dim::Energy)?,
            "sim.compton.max_energy" => s.compton_max_kev = e.quantity(Dim::Energy)?,
            "sim.speed_of_light" => {
                let c = e.quantity(Dim::Speed)?;
                s.c_mm_per_ps = c;
                self.prep.c_mm_per_ps = c;
            }
            "sim.event_spacing" => s.event_spacing_ps = e.quantity(Dim::Time)?,
            "campaign.z_positions" => self.campaign.z_positions_mm = e.quantity_list(Dim::Length)?,
            "campaign.xy_grid" => self.campaign.xy_grid_mm = e.quantity_list(Dim::Length)?,
            "campaign.events_per_point" => self.campaign.events_per_point = e.usize()?,
            "campaign.performance_events" => self.campaign.performance_events = e.usize()?,
            "campaign.split" => {
                let v = e.float_list()?;
                self.campaign.split_fractions =
                    v.try_into().map_err(|_| e.err("needs three fractions: train, validation, test"))?;
            }
            "prep.cluster_window" => self.prep.cluster_window_ps = e.quantity(Dim::Time)?,
            "prep.coincidence_window" => self.prep.coincidence_window_ps = e.quantity(Dim::Time)?,
            "prep.photon_min" => self.prep.photon_min = e.float()?,
            "prep.photon_max" => self.prep.photon_max = e.float()?,
            "prep.n_spad" => self.prep.n_spad = e.float()?,
            "energy.slab_voxels" => self.energy.slab_voxels = e.dims(e.plain()?)?,
            "energy.oto_voxels" => self.energy.oto_voxels = e.dims(e.plain()?)?,
            "energy.min_events" => self.energy.min_events = e.usize()?,
            "position.max_depth" => self.position.params.max_depth = e.usize()?,
            "position.learning_rate" => self.position.params.learning_rate = e.float()?,
            "position.n_estimators" => self.position.params.n_estimators = e.usize()?,
            "position.min_samples_leaf" => self.position.params.min_samples_leaf = e.usize()?,
            "position.max_train_events" => self.position.max_train_events = e.usize()?,
            "calibration.iterations" => self.calibration.iterations = e.schedule()?,
            "calibration.min_events" => self.calibration.mean.min_events = e.usize()?,
            "calibration.fit_min_events" => self.calibration.mean.fit_min_events = e.usize()?,
            "boost.depths" => self.boost.grid.depths = e.usize_list()?,
            "boost.learning_rates" => self.boost.grid.learning_rates = e.float_list()?,
            "boost.n_estimators" => self.boost.grid.base.n_estimators = e.usize()?,
            "boost.min_samples_leaf" => self.boost.grid.base.min_samples_leaf = e.usize()?,
            "boost.lambda" => self.boost.grid.base.lambda = e.float()?,
            "boost.min_split_gain" => self.boost.grid.base.min_split_gain = e.float()?,
            "boost.early_stopping_rounds" => {
                let v = e.usize()?;
                self.boost.grid.base.early_stopping_rounds = (v > 0).then_some(v);
            }
            "boost.max_bins" => self.boost.binning.max_bins = e.usize()?,
            "boost.exact_bins" => self.boost.binning.exact = e.bool()?,
            "evaluation.windows" => self.evaluation.windows = e.windows()?,
            "evaluation.linearity_z_min" => self.evaluation.linearity_z_mm.0 = e.quantity(Dim::Length)?,
            "evaluation.linearity_z_max" => self.evaluation.linearity_z_mm.1 = e.quantity(Dim::Length)?,
            "evaluation.z_uncertainty" => self.evaluation.z_uncertainty_mm = e.quantity(Dim::Length)?,
            "evaluation.min_fit_samples" => self.evaluation.min_fit_samples = e.usize()?,
            "explain.samples" => self.explain.samples = e.usize()?,
            "explain.seed" => self.explain.seed = e.u64()?,
            "explain.dependence_bins" => self.explain.dependence_bins = e.usize()?,
            _ => return Err(CliError::Config(format!("line {}: unknown key `{}`", e.line, e.key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.campaign.validate(&self.sim)?;
        self.calibration.validate()?;
        self.position.params.validate()?;
        for &lr in &self.boost.grid.learning_rates {
            HyperParams { learning_rate: lr, ..self.boost.grid.base.clone() }.validate()?;
        }
        if self.boost.grid.depths.is_empty() || self.boost.grid.learning_rates.is_empty() {
            return Err(CliError::Config("boost.depths and boost.learning_rates must be non-empty".into()));
        }
        if self.boost.grid.depths.contains(&0) {
            return Err(CliError::Config("boost.depths must be positive".into()));
        }
        if !(2..=tofcal_gbt::MAX_BINS_LIMIT).contains(&self.boost.binning.max_bins) {
            return Err(CliError::Config("boost.max_bins out of range".into()));
        }
        if self.energy.slab_voxels.contains(&0) || self.energy.oto_voxels.contains(&0) {
            return Err(CliError::Config("energy voxel grids must be positive".into()));
        }
        let p = &self.prep;
        if !(p.cluster_window_ps > 0.0 && p.coincidence_window_ps > 0.0 && p.photon_min < p.photon_max && p.n_spad >= 1.0) {
            return Err(CliError::Config("prep windows, photon bounds or n_spad invalid".into()));
        }
        if self.evaluation.windows.is_empty() {
            return Err(CliError::Config("evaluation.windows must not be empty".into()));
        }
        let (lo, hi) = self.evaluation.linearity_z_mm;
        if !(lo < hi) {
            return Err(CliError::Config("evaluation.linearity_z_min must be below linearity_z_max".into()));
        }
        if self.explain.dependence_bins == 0 {
            return Err(CliError::Config("explain.dependence_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn mean_dt_options(&self) -> &MeanDtOptions {
        &self.calibration.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_convert() {
        let c = PipelineConfig::parse("prep.cluster_window = 40 ns\nsim.compton.max_energy = 0.3 MeV\n").unwrap();
        assert_eq!(c.prep.cluster_window_ps, 40_000.0);
        assert_eq!(c.sim.compton_max_kev, 300.0);
    }

    #[test]
    fn ranges_and_lists() {
        let c = PipelineConfig::parse("campaign.z_positions = -10:10:5 mm\ncampaign.xy_grid = -1, 0, 1 cm").unwrap();
        assert_eq!(c.campaign.z_positions_mm, vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert_eq!(c.campaign.xy_grid_mm, vec![-10.0, 0.0, 10.0]);
    }

    #[test]
    fn schedule_and_windows() {
        let c = PipelineConfig::parse(
            "calibration.iterations = sipm, 8x4x3/8x8\nevaluation.windows = all; 400,600 keV",
        )
        .unwrap();
        assert_eq!(c.calibration.iterations.len(), 2);
        assert_eq!(c.calibration.iterations[1], Voxelization::Spatial { slab: [8, 4, 3], oto: [8, 8] });
        assert_eq!(c.evaluation.windows[1].range, Some((400.0, 600.0)));
    }

    #[test]
    fn default_grid_and_windows() {
        let c = PipelineConfig::default();
        assert_eq!(c.boost.grid.depths.len() * c.boost.grid.learning_rates.len(), 12);
        let names: Vec<&str> = c.evaluation.windows.iter().map(|w| w.name.as_str()).collect();
        assert_eq!(names, ["all", "300-700", "450-550"]);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_units() {
        let e = PipelineConfig::parse("sim.bogus = 3").unwrap_err();
        assert!(e.to_string().contains("sim.bogus"));
        assert_eq!(e.exit_code(), 2);
        let e = PipelineConfig::parse("sim.rise_jitter = 50").unwrap_err();
        assert!(e.to_string().contains("missing unit"));
        let e = PipelineConfig::parse("sim.rise_jitter = 50 mm").unwrap_err();
        assert!(e.to_string().contains("not a time"));
    }
}
