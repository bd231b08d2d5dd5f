//! Model, index and run-record files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fedcbmir_core::cae::{CaeConfig, CaeModel};
use fedcbmir_core::fed::{deserialize_weights, serialize_weights, RoundRecord};
use fedcbmir_core::numerics::{LayoutId, ModelWeights};
use fedcbmir_core::retrieval::{decode_index, encode_index, FeatureIndex};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, IoContext, Result};

/// Architecture description stored beside every weight file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_filters: Vec<usize>,
    pub residual_filters: Vec<usize>,
    pub bottleneck_dim: usize,
    pub decoder_filters: Vec<usize>,
    pub seed: u64,
    /// Hex layout id, checked against the weight file on load.
    pub layout_id: String,
}

impl From<&CaeConfig> for ModelSpec {
    fn from(c: &CaeConfig) -> Self {
        ModelSpec {
            channels: c.channels,
            height: c.height,
            width: c.width,
            encoder_filters: c.encoder_filters.clone(),
            residual_filters: c.residual_filters.clone(),
            bottleneck_dim: c.bottleneck_dim,
            decoder_filters: c.decoder_filters.clone(),
            seed: c.seed,
            layout_id: c.layout().id().to_string(),
        }
    }
}

impl From<&ModelSpec> for CaeConfig {
    fn from(s: &ModelSpec) -> Self {
        CaeConfig {
            channels: s.channels,
            height: s.height,
            width: s.width,
            encoder_filters: s.encoder_filters.clone(),
            residual_filters: s.residual_filters.clone(),
            bottleneck_dim: s.bottleneck_dim,
            decoder_filters: s.decoder_filters.clone(),
            seed: s.seed,
        }
    }
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| AppError::Config(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes the weight file and its `<path>.json` architecture sidecar.
pub fn save_model(path: impl AsRef<Path>, config: &CaeConfig, weights: &ModelWeights<f32>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &serialize_weights(weights))?;
    write_atomic(&sidecar_path(path), &to_json(&ModelSpec::from(config))?)
}

pub fn load_model_config(path: impl AsRef<Path>) -> Result<CaeConfig> {
    let side = sidecar_path(path.as_ref());
    let text = fs::read(&side).at(&side)?;
    let spec: ModelSpec = serde_json::from_slice(&text)
        .map_err(|e| AppError::Config(format!("{}: {e}", side.display())))?;
    let config = CaeConfig::from(&spec);
    config.validate()?;
    Ok(config)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CaeModel<f32>> {
    let path = path.as_ref();
    let config = load_model_config(path)?;
    let bytes = fs::read(path).at(path)?;
    let weights = deserialize_weights(&bytes, config.layout().id()).map_err(fedcbmir_core::Error::from)?;
    Ok(CaeModel::from_weights(config, weights)?)
}

pub fn save_index(path: impl AsRef<Path>, index: &FeatureIndex) -> Result<()> {
    write_atomic(path.as_ref(), &encode_index(index)?)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FeatureIndex> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    Ok(decode_index(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLine {
    pub round: u32,
    pub strategy: String,
    pub mean_client_loss: f64,
    pub wall_ms: f64,
}

impl From<&RoundRecord> for RoundLine {
    fn from(r: &RoundRecord) -> Self {
        RoundLine {
            round: r.round,
            strategy: r.strategy.to_string(),
            mean_client_loss: r.mean_client_loss,
            wall_ms: r.wall_ms,
        }
    }
}

/// Appends line-delimited JSON records, flushing after each.
#[derive(Debug)]
pub struct JsonLines {
    path: PathBuf,
    file: fs::File,
}

impl JsonLines {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let file = fs::File::create(&path).at(&path)?;
        Ok(JsonLines { path, file })
    }

    pub fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_vec(value).map_err(|e| AppError::Config(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).at(&self.path)?;
        self.file.flush().at(&self.path)
    }
}

pub fn read_json_lines<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| AppError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

/// Full configuration of one command invocation, written beside its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub core_version: &'a str,
    pub config: &'a C,
    pub layout_id: Option<String>,
    pub outputs: Vec<String>,
    pub extra: serde_json::Value,
}

pub fn write_run_record<C: Serialize>(path: impl AsRef<Path>, record: &RunRecord<'_, C>) -> Result<()> {
    write_atomic(path.as_ref(), &to_json(record)?)
}

pub fn run_record_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

pub fn layout_hex(id: LayoutId) -> String {
    id.to_string()
}
