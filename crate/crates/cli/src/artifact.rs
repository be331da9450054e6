//! Versioned JSON artifacts and stage summaries.
//!
//! Artifacts wrap their payload as `{format, version, schema_hash, data}`;
//! the hash is taken over the shipped schema text and must match at load.
//! Summaries carry `{format, version, stage, ...}` and validate against the
//! schemas in `schemas/`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tofcal_core::anacal::AnalyticalCalibration;
use tofcal_core::features::feature_names;
use tofcal_core::prep::{pixel_feature_names, EnergyCalibration, SlabPositionModel};
use tofcal_gbt::{schema_hash, TreeEnsemble};

use crate::error::{CliError, Result};

pub const ARTIFACT_VERSION: u32 = 1;
pub const SUMMARY_FORMAT: &str = "tofcal-summary";

/// A shipped JSON schema.
#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub name: &'static str,
    pub text: &'static str,
}

impl Schema {
    pub fn hash(&self) -> String {
        schema_hash(&[self.text])
    }
}

macro_rules! schema {
    ($name:literal) => {
        Schema { name: $name, text: include_str!(concat!("../schemas/", $name, ".schema.json")) }
    };
}

pub const CALIBRATION_SCHEMA: Schema = schema!("calibration");
pub const ENERGY_SCHEMA: Schema = schema!("energy");
pub const POSITION_SCHEMA: Schema = schema!("position");

pub const SUMMARY_SCHEMAS: [Schema; 6] = [
    schema!("simulate"),
    schema!("preprocess"),
    schema!("calibrate"),
    schema!("train"),
    schema!("evaluate"),
    schema!("explain"),
];

pub fn summary_schema(stage: &str) -> Option<Schema> {
    SUMMARY_SCHEMAS.iter().copied().find(|s| s.name == stage)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format: String,
    version: u32,
    schema_hash: String,
    data: T,
}

fn format_name(schema: &Schema) -> String {
    format!("tofcal-{}", schema.name)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => CliError::io(path, e),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_pretty<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    s.push('\n');
    Ok(s)
}

fn write_artifact<T: Serialize>(path: &Path, schema: &Schema, data: &T) -> Result<()> {
    let env = Envelope { format: format_name(schema), version: ARTIFACT_VERSION, schema_hash: schema.hash(), data };
    write_text(path, &to_pretty(path, &env)?)
}

fn read_artifact<T: DeserializeOwned>(path: &Path, schema: &Schema) -> Result<T> {
    let text = read_text(path)?;
    let bad = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let env: Envelope<Value> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if env.format != format_name(schema) {
        return Err(bad(format!("format {:?}, expected {:?}", env.format, format_name(schema))));
    }
    if env.version != ARTIFACT_VERSION {
        return Err(bad(format!("version {}, expected {ARTIFACT_VERSION}", env.version)));
    }
    if env.schema_hash != schema.hash() {
        return Err(bad(format!("schema hash {}, expected {}", env.schema_hash, schema.hash())));
    }
    serde_json::from_value(env.data).map_err(|e| bad(e.to_string()))
}

pub fn write_calibration(path: &Path, cal: &AnalyticalCalibration) -> Result<()> {
    write_artifact(path, &CALIBRATION_SCHEMA, cal)
}

pub fn read_calibration(path: &Path) -> Result<AnalyticalCalibration> {
    read_artifact(path, &CALIBRATION_SCHEMA)
}

pub fn write_energy(path: &Path, cal: &EnergyCalibration) -> Result<()> {
    write_artifact(path, &ENERGY_SCHEMA, cal)
}

pub fn read_energy(path: &Path) -> Result<EnergyCalibration> {
    read_artifact(path, &ENERGY_SCHEMA)
}

/// The three slab regressors as embedded model dumps.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PositionDump {
    x: Value,
    y: Value,
    doi: Value,
}

fn model_value(path: &Path, m: &TreeEnsemble) -> Result<Value> {
    serde_json::from_str(&m.to_json()?).map_err(|e| CliError::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_position(path: &Path, model: &SlabPositionModel) -> Result<()> {
    let dump = PositionDump { x: model_value(path, &model.x)?, y: model_value(path, &model.y)?, doi: model_value(path, &model.doi)? };
    write_artifact(path, &POSITION_SCHEMA, &dump)
}

pub fn read_position(path: &Path) -> Result<SlabPositionModel> {
    let dump: PositionDump = read_artifact(path, &POSITION_SCHEMA)?;
    let names = pixel_feature_names();
    let load = |v: &Value| TreeEnsemble::from_json_with_schema(&v.to_string(), &names);
    Ok(SlabPositionModel { x: load(&dump.x)?, y: load(&dump.y)?, doi: load(&dump.doi)? })
}

pub fn write_model(path: &Path, model: &TreeEnsemble) -> Result<()> {
    let mut s = model.to_json()?;
    s.push('\n');
    write_text(path, &s)
}

/// Loads a residual-timing model, requiring the current feature schema.
pub fn read_model(path: &Path) -> Result<TreeEnsemble> {
    Ok(TreeEnsemble::from_json_with_schema(&read_text(path)?, &feature_names())?)
}

#[derive(Serialize)]
struct SummaryHeader<'a, T> {
    format: &'static str,
    version: u32,
    stage: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_summary<T: Serialize>(path: &Path, stage: &str, body: &T) -> Result<()> {
    let s = SummaryHeader { format: SUMMARY_FORMAT, version: ARTIFACT_VERSION, stage, body };
    write_text(path, &to_pretty(path, &s)?)
}

pub fn read_summary<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    let text = read_text(path)?;
    let bad = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if v.get("format").and_then(Value::as_str) != Some(SUMMARY_FORMAT)
        || v.get("stage").and_then(Value::as_str) != Some(stage)
        || v.get("version").and_then(Value::as_u64) != Some(u64::from(ARTIFACT_VERSION))
    {
        return Err(bad(format!("not a version {ARTIFACT_VERSION} {stage} summary")));
    }
    serde_json::from_value(v).map_err(|e| bad(e.to_string()))
}
