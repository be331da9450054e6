//! In-memory pipeline stages. The command layer adds file I/O around them.

use rayon::prelude::*;
use serde::Serialize;

use tofcal_core::anacal::{run_subcalibration_schedule, AnalyticalCalibration};
use tofcal_core::detsim::CampaignOutput;
use tofcal_core::event::Coincidence;
use tofcal_core::features::{build_features, feature_groups, feature_names, first_sipm_counts, N_FEATURES};
use tofcal_core::fitstat::{
    ctr_fwhm, fit_gaussian, fit_linearity, goodness_by_position, mae, mae_by_position, runs_test, FitOptions,
    LinearityFit, LinearityPoint, PositionFit, PositionMae, RunsTest,
};
use tofcal_core::geometry::DetectorKind;
use tofcal_core::prep::{
    calibrate_energy, estimate_energies, estimate_positions, reconstruct, slab_truth_pairs, EnergyCalibration,
    ReconStats, SlabPositionModel,
};
use tofcal_core::rng::subset_indices;
use tofcal_gbt::{
    color_separation, group_importance, grid_search, DependencePoint, FeatureGroup, FeatureMatrix, GridResult,
    GroupImportance, Prepared, Samples, Separation, TreeEnsemble, TreeExplainer,
};

use crate::config::{EnergyWindow, PipelineConfig};
use crate::error::{CliError, Result};

pub const SPLITS: [&str; 4] = ["train", "validation", "test", "performance"];

pub fn split<'a>(sets: &'a CampaignOutput, name: &str) -> &'a [Coincidence] {
    match name {
        "train" => &sets.train,
        "validation" => &sets.validation,
        "test" => &sets.test,
        _ => &sets.performance,
    }
}

pub fn split_mut<'a>(sets: &'a mut CampaignOutput, name: &str) -> &'a mut Vec<Coincidence> {
    match name {
        "train" => &mut sets.train,
        "validation" => &mut sets.validation,
        "test" => &mut sets.test,
        _ => &mut sets.performance,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitStats {
    pub split: String,
    pub recon: ReconStats,
    pub position_dropped: usize,
}

pub struct PrepOutput {
    pub sets: CampaignOutput,
    pub energy: EnergyCalibration,
    pub position: SlabPositionModel,
    pub stats: Vec<SplitStats>,
}

/// Reconstruction, slab position regression, position and energy estimation.
/// The position model and the energy calibration are fitted on the training
/// split only.
pub fn preprocess(raw: &CampaignOutput, cfg: &PipelineConfig) -> Result<PrepOutput> {
    let mut sets = CampaignOutput::default();
    let mut stats = Vec::new();
    for name in SPLITS {
        let (coincs, recon) = reconstruct(split(raw, name), &cfg.prep)?;
        log::info!("{name}: {} records -> {} coincidences", recon.records, recon.kept);
        *split_mut(&mut sets, name) = coincs;
        stats.push(SplitStats { split: name.into(), recon, position_dropped: 0 });
    }

    let cap = cfg.position.max_train_events;
    let train_pairs = slab_truth_pairs(&sets.train[..sets.train.len().min(cap)])?;
    let valid_pairs = slab_truth_pairs(&sets.validation[..sets.validation.len().min(cap / 4)])?;
    if train_pairs.is_empty() {
        return Err(CliError::Numerical("no training coincidences left after reconstruction".into()));
    }
    let position = SlabPositionModel::train(&train_pairs, &valid_pairs, &cfg.position.params)?;

    for (i, name) in SPLITS.iter().enumerate() {
        stats[i].position_dropped = estimate_positions(split_mut(&mut sets, name), &position);
    }
    let energy = calibrate_energy(
        sets.train.iter().flat_map(|c| [&c.slab, &c.oto]),
        cfg.energy.slab_voxels,
        cfg.energy.oto_voxels,
        cfg.energy.min_events,
    )?;
    for name in SPLITS {
        estimate_energies(split_mut(&mut sets, name), &energy)?;
    }
    Ok(PrepOutput { sets, energy, position, stats })
}

/// Fits the analytical calibration on the training split and applies it to
/// every split.
pub fn calibrate(sets: &mut CampaignOutput, cfg: &PipelineConfig) -> Result<AnalyticalCalibration> {
    let cal = run_subcalibration_schedule(&mut sets.train, &cfg.calibration)?;
    for name in &SPLITS[1..] {
        cal.apply(split_mut(sets, name));
    }
    Ok(cal)
}

/// Feature rows and labels.
pub fn design(coincs: &[Coincidence]) -> Result<(FeatureMatrix, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = coincs.par_iter().map(build_features).collect::<std::result::Result<_, _>>()?;
    let mut x = FeatureMatrix::with_capacity(N_FEATURES, rows.len());
    for r in &rows {
        x.push_row(r);
    }
    Ok((x, coincs.iter().map(|c| c.label_ps).collect()))
}

pub fn train_grid(train: &[Coincidence], validation: &[Coincidence], cfg: &PipelineConfig) -> Result<GridResult> {
    let (tx, ty) = design(train)?;
    let (vx, vy) = design(validation)?;
    let valid = if vy.is_empty() { None } else { Some(Samples::new(&vx, &vy)?) };
    let prepared = Prepared::new(feature_names(), Samples::new(&tx, &ty)?, valid, cfg.boost.binning)?;
    Ok(grid_search(&prepared, &cfg.boost.grid)?)
}

pub fn model_name(m: &TreeEnsemble) -> String {
    format!("d{}_lr{}", m.max_depth, m.learning_rate)
}

/// Estimator of the label: the analytically corrected time difference or a
/// trained model.
#[derive(Clone, Copy)]
pub enum Method<'a> {
    Raw,
    Analytical,
    Model(&'a TreeEnsemble),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Raw => "raw".into(),
            Method::Analytical => "analytical".into(),
            Method::Model(m) => model_name(m),
        }
    }
}

/// Predictions of a method on coincidences.
pub fn predict(method: Method<'_>, coincs: &[Coincidence]) -> Result<Vec<f64>> {
    match method {
        Method::Raw | Method::Analytical => {
            coincs.iter().map(|c| c.delta_t_ps().map_err(CliError::from)).collect()
        }
        Method::Model(m) => {
            let (x, _) = design(coincs)?;
            Ok(m.predict_matrix(&x)?)
        }
    }
}

fn in_window<'a>(coincs: &'a [Coincidence], w: &EnergyWindow) -> Vec<&'a Coincidence> {
    coincs.iter().filter(|c| c.in_energy_window(w.range)).collect()
}

fn select(coincs: &[Coincidence], w: &EnergyWindow) -> Vec<Coincidence> {
    in_window(coincs, w).into_iter().cloned().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CtrRow {
    pub window: String,
    pub method: String,
    pub n: usize,
    pub ctr_ps: f64,
    pub ctr_err_ps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaeRow {
    pub window: String,
    pub method: String,
    pub n: usize,
    pub mae_ps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearityRow {
    pub method: String,
    pub fit: LinearityFit,
    pub runs: Option<RunsTest>,
    pub points: Vec<PositionFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub ctr: Vec<CtrRow>,
    pub mae: Vec<MaeRow>,
    /// Best model, per source position, all energies.
    pub mae_by_position: Vec<PositionMae>,
    pub goodness_by_position: Vec<PositionFit>,
    pub linearity: Vec<LinearityRow>,
}

fn fit_opts(cfg: &PipelineConfig) -> FitOptions {
    FitOptions { min_samples: cfg.evaluation.min_fit_samples, ..FitOptions::default() }
}

/// CTR of `prediction - label` on a performance set.
pub fn ctr_row(method: Method<'_>, coincs: &[Coincidence], window: &EnergyWindow, opts: &FitOptions) -> Result<CtrRow> {
    let sel = select(coincs, window);
    let pred = predict(method, &sel)?;
    let resid: Vec<f64> = pred.iter().zip(&sel).map(|(p, c)| p - c.label_ps).collect();
    let fit = fit_gaussian(&resid, opts)?;
    let (ctr_ps, ctr_err_ps) = ctr_fwhm(&fit);
    Ok(CtrRow { window: window.name.clone(), method: method.name(), n: sel.len(), ctr_ps, ctr_err_ps })
}

pub fn mae_row(method: Method<'_>, coincs: &[Coincidence], window: &EnergyWindow) -> Result<MaeRow> {
    let sel = select(coincs, window);
    let pred = predict(method, &sel)?;
    let labels: Vec<f64> = sel.iter().map(|c| c.label_ps).collect();
    Ok(MaeRow { window: window.name.clone(), method: method.name(), n: sel.len(), mae_ps: mae(&labels, &pred)? })
}

/// Straight-line fit of per-position mean predictions against source z
/// inside the configured range.
pub fn linearity(method: Method<'_>, test: &[Coincidence], cfg: &PipelineConfig) -> Result<LinearityRow> {
    let (lo, hi) = cfg.evaluation.linearity_z_mm;
    let sel: Vec<Coincidence> =
        test.iter().filter(|c| c.source_mm[2] >= lo - 1e-9 && c.source_mm[2] <= hi + 1e-9).cloned().collect();
    let pred = predict(method, &sel)?;
    let z: Vec<f64> = sel.iter().map(|c| c.source_mm[2]).collect();
    let points = goodness_by_position(&z, &pred, &fit_opts(cfg))?;
    let lin: Vec<LinearityPoint> = points
        .iter()
        .filter(|p| p.n >= 2 && p.mu_err_ps > 0.0)
        .map(|p| LinearityPoint { x: p.z_mm, sx: cfg.evaluation.z_uncertainty_mm, y: p.mu_ps, sy: p.mu_err_ps })
        .collect();
    let fit = fit_linearity(&lin, cfg.sim.c_mm_per_ps)?;
    let resid: Vec<f64> = fit.residuals.iter().map(|r| r.residual).collect();
    Ok(LinearityRow { method: method.name(), runs: runs_test(&resid).ok(), fit, points })
}

/// Tables for raw, analytical and every model. `perf_raw` is the
/// performance set before timing calibration.
pub fn evaluate(
    models: &[&TreeEnsemble],
    best: usize,
    test: &[Coincidence],
    perf_raw: &[Coincidence],
    perf: &[Coincidence],
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let opts = fit_opts(cfg);
    let mut ctr = Vec::new();
    let mut mae_rows = Vec::new();
    for w in &cfg.evaluation.windows {
        ctr.push(ctr_row(Method::Raw, perf_raw, w, &opts)?);
        ctr.push(ctr_row(Method::Analytical, perf, w, &opts)?);
        mae_rows.push(mae_row(Method::Analytical, test, w)?);
        for m in models {
            ctr.push(ctr_row(Method::Model(m), perf, w, &opts)?);
            mae_rows.push(mae_row(Method::Model(m), test, w)?);
        }
    }
    let best_model = models.get(best).ok_or_else(|| CliError::Config("no trained models".into()))?;
    let pred = predict(Method::Model(best_model), test)?;
    let z: Vec<f64> = test.iter().map(|c| c.source_mm[2]).collect();
    let labels: Vec<f64> = test.iter().map(|c| c.label_ps).collect();
    let by_pos = mae_by_position(&z, &labels, &pred)?;
    let goodness = goodness_by_position(&z, &pred, &opts)?;
    let linearity = models.iter().map(|m| linearity(Method::Model(m), test, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { ctr, mae: mae_rows, mae_by_position: by_pos, goodness_by_position: goodness, linearity })
}

#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub model: String,
    pub window: String,
    pub n_samples: usize,
    pub base_value: f64,
    /// Largest `|base + sum(sv) - prediction|` over the explained samples.
    pub max_local_accuracy_error: f64,
    pub importance: Vec<GroupImportance>,
    /// `dt_meas` value, its attribution, and the first one-to-one SiPM's counts.
    pub dependence: Vec<DependencePoint>,
    pub separation: Separation,
}

/// Attributions on a seeded subset of the performance set.
pub fn explain(model: &TreeEnsemble, perf: &[Coincidence], window: &EnergyWindow, cfg: &PipelineConfig) -> Result<Explanation> {
    let sel = in_window(perf, window);
    let idx = subset_indices(sel.len(), cfg.explain.samples, cfg.explain.seed);
    let subset: Vec<Coincidence> = idx.iter().map(|&i| sel[i].clone()).collect();
    let (x, _) = design(&subset)?;
    let explainer = TreeExplainer::new(model);
    let expl = explainer.explain_matrix(&x)?;
    let pred = model.predict_matrix(&x)?;
    let max_err = expl.iter().zip(&pred).map(|(e, p)| (e.reconstructed() - p).abs()).fold(0.0, f64::max);
    let groups: Vec<FeatureGroup> = feature_groups();
    let importance = group_importance(&expl, &groups)?;
    let dependence: Vec<DependencePoint> = expl
        .iter()
        .map(|e| DependencePoint {
            value: e.feature_values[0],
            sv: e.sv[0],
            color: first_sipm_counts(&e.feature_values, DetectorKind::OneToOne),
        })
        .collect();
    let separation = color_separation(&dependence, cfg.explain.dependence_bins);
    Ok(Explanation {
        model: model_name(model),
        window: window.name.clone(),
        n_samples: expl.len(),
        base_value: explainer.base_value(),
        max_local_accuracy_error: max_err,
        importance,
        dependence,
        separation,
    })
}
