//! Event model, detector simulation, preprocessing, analytical timing
//! calibration and fit statistics for a two-detector coincidence setup.

pub mod anacal;
pub mod detsim;
pub mod error;
pub mod event;
pub mod features;
pub mod fitstat;
pub mod geometry;
pub mod prep;
pub mod rng;

pub use error::{CoreError, Result};
