//! Gaussian fits, CTR, MAE tables and the straight-line linearity fit.

mod gaussian;
mod linearity;
mod metrics;

pub use gaussian::{build_histogram, ctr_fwhm, fit_gaussian, fit_histogram, FitOptions, GaussianFit, Histogram};
pub use linearity::{fit_linearity, runs_test, LinearityFit, LinearityPoint, LinearityResidual, RunsTest};
pub use metrics::{goodness_by_position, mae, mae_by_position, PositionFit, PositionMae};
