//! Synthetic coincidence generator for a slab detector facing a one-to-one
//! coupled detector, with recorded ground truth for every injected effect.

mod campaign;
mod event;
mod model;

pub use campaign::{run_campaign, simulate_performance, simulate_point, CampaignOutput, CampaignPlan, Split};
pub use event::{saturate, simulate_event};
pub use model::{DetectorConstants, DetectorModel, SimConfig, SkewModel};
