//! Model file: one JSON header line, then the parameters as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionModel, ModelConfig};
use crate::connectivity::{Feature, NormStats};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub feature_order: Vec<Feature>,
    pub n_params: usize,
    /// Statistics the model's inputs were normalized with.
    pub norm_stats: Option<NormStats>,
    /// Hash of the extraction config of the training dataset.
    pub dataset_config_hash: Option<String>,
}

impl ModelHeader {
    pub fn new(model: &FusionModel, norm_stats: Option<NormStats>, dataset_config_hash: Option<String>) -> Self {
        ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            config: model.config.clone(),
            feature_order: Feature::ALL[..model.config.features].to_vec(),
            n_params: model.n_params(),
            norm_stats,
            dataset_config_hash,
        }
    }
}

pub fn save_model(model: &FusionModel, header: &ModelHeader, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec(header)?;
    bytes.push(b'\n');
    for p in &model.params {
        bytes.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(FusionModel, ModelHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format("missing header line".into()))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| format(e.to_string()))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(format(format!("unsupported format_version {}", header.format_version)));
    }
    let mut model = FusionModel::build(&header.config)?;
    let body = &bytes[nl + 1..];
    if header.n_params != model.n_params() || body.len() != 4 * model.n_params() {
        return Err(format(format!(
            "expected {} parameters, header says {} and body holds {} bytes",
            model.n_params(),
            header.n_params,
            body.len()
        )));
    }
    for (p, ch) in model.params.iter_mut().zip(body.chunks_exact(4)) {
        *p = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64;
    }
    Ok((model, header))
}
