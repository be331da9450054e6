//! Analytical timing calibration from channel-pair mean time differences.

mod bins;
mod schedule;
mod solve;

pub use bins::{collect_samples, estimate_mean_dt, BinMean, MeanDt, MeanDtOptions, Voxelization};
pub use schedule::{
    residual_ctr, run_subcalibration_schedule, solve_iteration, AnalyticalCalibration, CalibrationSolution,
    IterationReport, Schedule, CALIBRATION_VERSION,
};
pub use solve::{build_matrix, solve_corrections, Corrections, IncidenceMatrix};
