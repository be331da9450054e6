//! Pipeline stages with file I/O. Every stage reads its inputs from and
//! writes its outputs under one output directory:
//!
//! ```text
//! data/{split}.tcd, data/{split}.truth.csv        simulate
//! prep/{split}.tcd, prep/energy.json, prep/position.json   preprocess
//! calib/{split}.tcd, calib/calibration.json       calibrate
//! models/{name}.json, train.csv                   train
//! ctr.csv, mae.csv, mae_by_position.csv, linearity.csv     evaluate
//! importance.csv, dependence.csv                  explain
//! report.md                                       report
//! {stage}.json                                    summary of each stage
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tofcal_core::anacal::IterationReport;
use tofcal_core::detsim::{run_campaign, CampaignOutput};
use tofcal_core::geometry::{DetectorKind, N_SIPMS};
use tofcal_gbt::{GroupImportance, Separation};

use crate::artifact::{self, read_summary, write_summary};
use crate::config::PipelineConfig;
use crate::dataset::{read_dataset, read_truth, write_csv, write_dataset, write_truth};
use crate::error::{CliError, Result};
use crate::pipeline::{self, model_name, split, split_mut, SplitStats, SPLITS};

pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn dataset(&self, stage: &str, name: &str) -> PathBuf {
        self.path(format!("{stage}/{name}.tcd"))
    }

    fn read_sets(&self, stage: &str) -> Result<CampaignOutput> {
        let mut sets = CampaignOutput::default();
        for name in SPLITS {
            *split_mut(&mut sets, name) = read_dataset(&self.dataset(stage, name))?;
        }
        Ok(sets)
    }

    fn write_sets(&self, stage: &str, sets: &CampaignOutput) -> Result<()> {
        SPLITS.iter().try_for_each(|name| write_dataset(&self.dataset(stage, name), split(sets, name)))
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let csv_err = |e: csv::Error| CliError::Format { path: path.to_path_buf(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: String,
    pub records: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub seed: u64,
    pub detector_seed: u64,
    pub splits: Vec<SplitCount>,
}

pub fn simulate(ctx: &Context, export_csv: bool) -> Result<SimulateSummary> {
    let cfg = &ctx.cfg;
    let raw = run_campaign(&cfg.campaign, &cfg.sim)?;
    let mut splits = Vec::new();
    for name in SPLITS {
        let data = split(&raw, name);
        let file = format!("data/{name}.tcd");
        write_dataset(&ctx.path(&file), data)?;
        write_truth(&ctx.path(format!("data/{name}.truth.csv")), data)?;
        if export_csv {
            write_csv(&ctx.path(format!("data/{name}.csv")), data)?;
        }
        splits.push(SplitCount { split: name.into(), records: data.len(), file });
    }
    let summary = SimulateSummary { seed: cfg.campaign.seed, detector_seed: cfg.sim.detector_seed, splits };
    write_summary(&ctx.path("simulate.json"), "simulate", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergySummary {
    pub detector: String,
    pub voxels: usize,
    pub fallback_voxels: usize,
    pub global_peak_photons: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSummary {
    pub splits: Vec<SplitStats>,
    pub energy: Vec<EnergySummary>,
}

pub fn preprocess(ctx: &Context) -> Result<PreprocessSummary> {
    let mut raw = CampaignOutput::default();
    for name in SPLITS {
        let mut data = read_dataset(&ctx.dataset("data", name))?;
        read_truth(&ctx.path(format!("data/{name}.truth.csv")), &mut data)?;
        *split_mut(&mut raw, name) = data;
    }
    let out = pipeline::preprocess(&raw, &ctx.cfg)?;
    ctx.write_sets("prep", &out.sets)?;
    artifact::write_energy(&ctx.path("prep/energy.json"), &out.energy)?;
    artifact::write_position(&ctx.path("prep/position.json"), &out.position)?;
    let energy = [(DetectorKind::Slab, "slab"), (DetectorKind::OneToOne, "oto")]
        .into_iter()
        .map(|(k, name)| {
            let p = out.energy.peaks(k);
            EnergySummary {
                detector: name.into(),
                voxels: p.n_voxels(),
                fallback_voxels: p.fallback.iter().filter(|f| **f).count(),
                global_peak_photons: p.global_peak,
            }
        })
        .collect();
    let summary = PreprocessSummary { splits: out.stats, energy };
    write_summary(&ctx.path("preprocess.json"), "preprocess", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateSummary {
    pub initial_ctr_ps: Option<f64>,
    pub iterations: Vec<IterationReport>,
    /// Estimated per-SiPM skews, zero mean per detector.
    pub slab_sipm_skews_ps: [f64; N_SIPMS],
    pub oto_sipm_skews_ps: [f64; N_SIPMS],
}

pub fn calibrate(ctx: &Context) -> Result<CalibrateSummary> {
    let mut sets = ctx.read_sets("prep")?;
    let cal = pipeline::calibrate(&mut sets, &ctx.cfg)?;
    ctx.write_sets("calib", &sets)?;
    artifact::write_calibration(&ctx.path("calib/calibration.json"), &cal)?;
    let summary = CalibrateSummary {
        initial_ctr_ps: cal.initial_ctr_ps,
        iterations: cal.reports.clone(),
        slab_sipm_skews_ps: cal.sipm_skews(DetectorKind::Slab),
        oto_sipm_skews_ps: cal.sipm_skews(DetectorKind::OneToOne),
    };
    write_summary(&ctx.path("calibrate.json"), "calibrate", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub best_n_trees: usize,
    pub valid_mse: f64,
    pub stopped_early: bool,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_events: usize,
    pub validation_events: usize,
    pub grid: Vec<GridRow>,
    pub best: String,
}

impl TrainSummary {
    pub fn best_row(&self) -> Option<&GridRow> {
        self.grid.iter().find(|r| r.model == self.best)
    }
}

pub fn train(ctx: &Context) -> Result<TrainSummary> {
    let tr = read_dataset(&ctx.dataset("calib", "train"))?;
    let va = read_dataset(&ctx.dataset("calib", "validation"))?;
    let grid = pipeline::train_grid(&tr, &va, &ctx.cfg)?;
    let mut rows = Vec::new();
    for (e, m) in grid.entries.iter().zip(&grid.models) {
        let name = model_name(m);
        let file = format!("models/{name}.json");
        artifact::write_model(&ctx.path(&file), m)?;
        rows.push(GridRow {
            model: name,
            max_depth: e.max_depth,
            learning_rate: e.learning_rate,
            best_n_trees: e.best_n_trees,
            valid_mse: e.valid_mse,
            stopped_early: e.log.stopped_early,
            file,
        });
    }
    write_rows(&ctx.path("train.csv"), &rows)?;
    let summary = TrainSummary {
        train_events: tr.len(),
        validation_events: va.len(),
        best: model_name(grid.best_model()),
        grid: rows,
    };
    write_summary(&ctx.path("train.json"), "train", &summary)?;
    Ok(summary)
}

fn load_models(ctx: &Context) -> Result<(TrainSummary, Vec<tofcal_gbt::TreeEnsemble>)> {
    let summary: TrainSummary = read_summary(&ctx.path("train.json"), "train")?;
    let models = summary.grid.iter().map(|r| artifact::read_model(&ctx.path(&r.file))).collect::<Result<Vec<_>>>()?;
    Ok((summary, models))
}

#[derive(Serialize)]
struct LinearityCsvRow<'a> {
    method: &'a str,
    epsilon: f64,
    epsilon_err: f64,
    intercept_ps: f64,
    intercept_err_ps: f64,
    chi2: f64,
    ndf: usize,
    runs_p_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateSummary {
    pub best: String,
    #[serde(flatten)]
    pub evaluation: pipeline::Evaluation,
}

pub fn evaluate(ctx: &Context) -> Result<EvaluateSummary> {
    let (train, models) = load_models(ctx)?;
    let best = train
        .grid
        .iter()
        .position(|r| r.model == train.best)
        .ok_or_else(|| CliError::Format { path: ctx.path("train.json"), msg: format!("best model {} not in grid", train.best) })?;
    let test = read_dataset(&ctx.dataset("calib", "test"))?;
    let perf_raw = read_dataset(&ctx.dataset("prep", "performance"))?;
    let perf = read_dataset(&ctx.dataset("calib", "performance"))?;
    let refs: Vec<_> = models.iter().collect();
    let evaluation = pipeline::evaluate(&refs, best, &test, &perf_raw, &perf, &ctx.cfg)?;
    write_rows(&ctx.path("ctr.csv"), &evaluation.ctr)?;
    write_rows(&ctx.path("mae.csv"), &evaluation.mae)?;
    write_rows(&ctx.path("mae_by_position.csv"), &evaluation.mae_by_position)?;
    let lin: Vec<LinearityCsvRow> = evaluation
        .linearity
        .iter()
        .map(|l| LinearityCsvRow {
            method: &l.method,
            epsilon: l.fit.epsilon,
            epsilon_err: l.fit.epsilon_err,
            intercept_ps: l.fit.intercept,
            intercept_err_ps: l.fit.intercept_err,
            chi2: l.fit.chi2,
            ndf: l.fit.ndf,
            runs_p_value: l.runs.as_ref().map(|r| r.p_value),
        })
        .collect();
    write_rows(&ctx.path("linearity.csv"), &lin)?;
    let summary = EvaluateSummary { best: train.best, evaluation };
    write_summary(&ctx.path("evaluate.json"), "evaluate", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainSummary {
    pub model: String,
    pub window: String,
    pub n_samples: usize,
    pub base_value: f64,
    pub max_local_accuracy_error: f64,
    pub importance: Vec<GroupImportance>,
    pub separation: Separation,
}

/// Explains the best model of the grid on the performance set.
pub fn explain(ctx: &Context) -> Result<ExplainSummary> {
    let train: TrainSummary = read_summary(&ctx.path("train.json"), "train")?;
    let row = train.best_row().ok_or_else(|| CliError::Format {
        path: ctx.path("train.json"),
        msg: format!("best model {} not in grid", train.best),
    })?;
    let model = artifact::read_model(&ctx.path(&row.file))?;
    let perf = read_dataset(&ctx.dataset("calib", "performance"))?;
    let window = &ctx.cfg.evaluation.windows[0];
    let e = pipeline::explain(&model, &perf, window, &ctx.cfg)?;
    write_rows(&ctx.path("importance.csv"), &e.importance)?;
    write_rows(&ctx.path("dependence.csv"), &e.dependence)?;
    let summary = ExplainSummary {
        model: e.model,
        window: e.window,
        n_samples: e.n_samples,
        base_value: e.base_value,
        max_local_accuracy_error: e.max_local_accuracy_error,
        importance: e.importance,
        separation: e.separation,
    };
    write_summary(&ctx.path("explain.json"), "explain", &summary)?;
    Ok(summary)
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x.abs() >= 100.0 => format!("{x:.1}"),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn table(md: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(md, "| {} |", header.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(md, "| {} |", r.join(" | "));
    }
    md.push('\n');
}

fn rows_of<'a>(v: &'a Value, key: &str) -> impl Iterator<Item = &'a Value> {
    v.get(key).and_then(Value::as_array).into_iter().flatten()
}

fn field(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(x @ Value::Number(_)) if x.is_u64() || x.is_i64() => x.to_string(),
        Some(x) => num(x),
        None => "-".into(),
    }
}

/// Markdown tables from whichever stage summaries exist.
pub fn report(ctx: &Context) -> Result<String> {
    let load = |stage: &str| -> Result<Option<Value>> {
        let p = ctx.path(format!("{stage}.json"));
        if !p.exists() {
            return Ok(None);
        }
        read_summary(&p, stage).map(Some)
    };
    let mut md = String::from("# tofcal report\n\n");
    let mut any = false;
    if let Some(s) = load("calibrate")? {
        any = true;
        let _ = writeln!(md, "## Analytical calibration\n\nInitial CTR: {} ps\n", num(&s["initial_ctr_ps"]));
        table(
            &mut md,
            &["iteration", "bins", "max abs correction (ps)", "inter-detector offset (ps)", "CTR (ps)"],
            rows_of(&s, "iterations").map(|r| {
                ["iteration", "n_bins", "max_abs_correction_ps", "inter_detector_offset_ps", "ctr_ps"]
                    .iter()
                    .map(|k| field(r, k))
                    .collect()
            }),
        );
    }
    if let Some(s) = load("train")? {
        any = true;
        let _ = writeln!(md, "## Hyperparameter grid\n\nBest: {}\n", field(&s, "best"));
        table(
            &mut md,
            &["model", "depth", "learning rate", "trees", "validation MSE (ps^2)"],
            rows_of(&s, "grid").map(|r| {
                ["model", "max_depth", "learning_rate", "best_n_trees", "valid_mse"].iter().map(|k| field(r, k)).collect()
            }),
        );
    }
    if let Some(s) = load("evaluate")? {
        any = true;
        md.push_str("## CTR on the performance set\n\n");
        table(
            &mut md,
            &["window (keV)", "method", "events", "CTR (ps)", "error (ps)"],
            rows_of(&s, "ctr").map(|r| ["window", "method", "n", "ctr_ps", "ctr_err_ps"].iter().map(|k| field(r, k)).collect()),
        );
        md.push_str("## MAE on the test set\n\n");
        table(
            &mut md,
            &["window (keV)", "method", "events", "MAE (ps)"],
            rows_of(&s, "mae").map(|r| ["window", "method", "n", "mae_ps"].iter().map(|k| field(r, k)).collect()),
        );
        md.push_str("## Linearity\n\n");
        table(
            &mut md,
            &["method", "epsilon", "error", "intercept (ps)", "runs test p"],
            rows_of(&s, "linearity").map(|r| {
                let f = &r["fit"];
                vec![field(r, "method"), field(f, "epsilon"), field(f, "epsilon_err"), field(f, "intercept"), num(&r["runs"]["p_value"])]
            }),
        );
    }
    if let Some(s) = load("explain")? {
        any = true;
        let _ = writeln!(
            md,
            "## Feature importance\n\nModel {}, window {}, {} samples, max local accuracy error {:e} ps\n",
            field(&s, "model"),
            field(&s, "window"),
            field(&s, "n_samples"),
            s["max_local_accuracy_error"].as_f64().unwrap_or(f64::NAN)
        );
        table(
            &mut md,
            &["group", "features", "mean abs SV (ps)"],
            rows_of(&s, "importance").map(|r| ["group", "n_features", "mean_abs_sv"].iter().map(|k| field(r, k)).collect()),
        );
        let _ = writeln!(md, "Count separation of SV(dt_meas): rho = {}\n", num(&s["separation"]["rho"]));
    }
    if !any {
        return Err(CliError::MissingInput(ctx.path("calibrate.json")));
    }
    artifact::write_text(&ctx.path("report.md"), &md)?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_table_layout() {
        let mut md = String::new();
        table(&mut md, &["a", "b"], [vec!["1".into(), "2".into()]]);
        assert_eq!(md, "| a | b |\n|---|---|\n| 1 | 2 |\n\n");
    }

    #[test]
    fn numbers_are_rounded_for_display() {
        assert_eq!(num(&serde_json::json!(123.456)), "123.5");
        assert_eq!(num(&serde_json::json!(0.99871)), "0.9987");
        assert_eq!(num(&Value::Null), "-");
    }
}
