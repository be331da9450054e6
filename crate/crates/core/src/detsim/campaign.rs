use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::Coincidence;
use crate::rng::{event_rng, STREAM_PERFORMANCE};

use super::event::simulate_event;
use super::model::{DetectorConstants, SimConfig};

/// Source positions and sizes of a measurement campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub z_positions_mm: Vec<f64>,
    /// Grid coordinates used for both x and y.
    pub xy_grid_mm: Vec<f64>,
    pub events_per_point: usize,
    /// Events of the iso-center performance set.
    pub performance_events: usize,
    pub seed: u64,
    /// Train / validation / test fractions; must sum to 1.
    pub split_fractions: [f64; 3],
}

impl Default for CampaignPlan {
    fn default() -> Self {
        Self {
            z_positions_mm: (0..47).map(|i| -130.0 + 5.0 * i as f64).collect(),
            xy_grid_mm: (0..5).map(|i| -12.0 + 6.0 * i as f64).collect(),
            events_per_point: 200,
            performance_events: 20_000,
            seed: 42,
            split_fractions: [0.6, 0.2, 0.2],
        }
    }
}

impl CampaignPlan {
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        let half = crate::geometry::DETECTOR_SPACING_MM / 2.0;
        if let Some(z) = self.z_positions_mm.iter().find(|z| !(z.abs() < half)) {
            return Err(CoreError::Config(format!("campaign.z_positions: {z} mm outside the detector gap")));
        }
        if let Some(v) = self.xy_grid_mm.iter().find(|v| !(v.abs() < crate::geometry::TILE_HALF_WIDTH_MM)) {
            return Err(CoreError::Config(format!("campaign.xy_grid: {v} mm outside the detector face")));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config("campaign.split_fractions must be >= 0 and sum to 1".into()));
        }
        cfg.validate()
    }

    /// Grid points in emission order: z outermost, then y, then x.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for &z in &self.z_positions_mm {
            for &y in &self.xy_grid_mm {
                for &x in &self.xy_grid_mm {
                    pts.push([x, y, z]);
                }
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Simulated datasets; records of one grid point are contiguous and in time order.
#[derive(Debug, Clone, Default)]
pub struct CampaignOutput {
    pub train: Vec<Coincidence>,
    pub validation: Vec<Coincidence>,
    pub test: Vec<Coincidence>,
    pub performance: Vec<Coincidence>,
}

/// Emission time of event `index`: one slot per event plus a random offset
/// within the first half of the slot, so neighbouring events never overlap.
fn emission_time<R: Rng>(rng: &mut R, index: usize, spacing: f64) -> f64 {
    (index as f64 + 0.5 * rng.random::<f64>()) * spacing
}

/// Simulates `n` events at one source position on its own RNG stream.
pub fn simulate_point(
    source: [f64; 3],
    n: usize,
    seed: u64,
    stream: u64,
    cfg: &SimConfig,
    consts: &DetectorConstants,
) -> Vec<(f64, Coincidence)> {
    (0..n)
        .map(|k| {
            let mut rng = event_rng(seed, stream, k as u64);
            let u: f64 = rng.random();
            let t0 = emission_time(&mut rng, k, cfg.event_spacing_ps);
            (u, simulate_event(source, t0, cfg, consts, &mut rng))
        })
        .collect()
}

/// Runs the whole campaign. The result depends only on the plan, the
/// configuration and the seeds, never on the thread count.
pub fn run_campaign(plan: &CampaignPlan, cfg: &SimConfig) -> Result<CampaignOutput> {
    plan.validate(cfg)?;
    let consts = DetectorConstants::draw(cfg);
    let points = plan.points();
    let per_point: Vec<Vec<(f64, Coincidence)>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| simulate_point(p, plan.events_per_point, plan.seed, i as u64, cfg, &consts))
        .collect();
    let mut out = CampaignOutput::default();
    let [f_train, f_valid, _] = plan.split_fractions;
    for events in per_point {
        for (u, c) in events {
            if u < f_train {
                out.train.push(c);
            } else if u < f_train + f_valid {
                out.validation.push(c);
            } else {
                out.test.push(c);
            }
        }
    }
    out.performance = simulate_performance(plan.performance_events, plan.seed, cfg, &consts);
    log::info!(
        "simulated {} train, {} validation, {} test, {} performance coincidences",
        out.train.len(),
        out.validation.len(),
        out.test.len(),
        out.performance.len()
    );
    Ok(out)
}

/// Iso-center events on a dedicated stream, generated in parallel chunks.
pub fn simulate_performance(n: usize, seed: u64, cfg: &SimConfig, consts: &DetectorConstants) -> Vec<Coincidence> {
    const CHUNK: usize = 4096;
    let chunks: Vec<Vec<Coincidence>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(n))
                .map(|k| {
                    let mut rng = event_rng(seed, STREAM_PERFORMANCE, k as u64);
                    let t0 = emission_time(&mut rng, k, cfg.event_spacing_ps);
                    simulate_event([0.0; 3], t0, cfg, consts, &mut rng)
                })
                .collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}
