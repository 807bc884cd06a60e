//! Checkpoint directory: `manifest.json` plus `weights.bin` holding every
//! parameter in manifest order as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::imaging::Modality;
use crate::numcore::{Matrix, Rng};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub modalities: Vec<Modality>,
    pub params: Vec<ParamEntry>,
    pub train: Option<TrainConfig>,
    /// Best-epoch metrics; absent values were undefined.
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl CheckpointManifest {
    pub fn describe(model: &Model) -> Self {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            model: model.cfg.clone(),
            modalities: model.modalities(),
            params: model
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape(),
                })
                .collect(),
            train: None,
            metrics: BTreeMap::new(),
        }
    }
}

pub fn save_checkpoint(model: &Model, manifest: &CheckpointManifest, dir: &Path) -> Result<()> {
    let expected = CheckpointManifest::describe(model);
    if manifest.params != expected.params || manifest.model != model.cfg {
        return Err(Error::Argument("manifest does not describe this model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Argument(format!("manifest serialization: {e}")))?;
    json.push('\n');
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
    let mut bytes = Vec::with_capacity(model.n_weights() * 8);
    for p in model.params() {
        for v in p.value.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let wp = dir.join(WEIGHTS_FILE);
    fs::write(&wp, bytes).map_err(|e| Error::io(&wp, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", mp.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let wp = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    let mut model = Model::new(manifest.model.clone(), &manifest.modalities, &mut Rng::seed(0))
        .map_err(|e| Error::CorruptCheckpoint(format!("manifest model config: {e}")))?;
    let expected = CheckpointManifest::describe(&model);
    if expected.params != manifest.params {
        return Err(Error::CorruptCheckpoint(
            "parameter names or shapes do not match the model config".into(),
        ));
    }
    let total: usize = manifest.params.iter().map(|p| p.shape.0 * p.shape.1).sum();
    if bytes.len() != total * 8 {
        return Err(Error::CorruptCheckpoint(format!(
            "{} holds {} bytes, manifest needs {}",
            wp.display(),
            bytes.len(),
            total * 8
        )));
    }
    let mut chunks = bytes.chunks_exact(8);
    for p in model.params_mut() {
        let (r, c) = p.shape();
        let data: Vec<f64> = chunks
            .by_ref()
            .take(r * c)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        p.value = Matrix::from_vec(r, c, data)?;
    }
    Ok((model, manifest))
}

/// Fails unless the checkpoint's architecture equals `expected`.
pub fn ensure_config(manifest: &CheckpointManifest, expected: &ModelConfig) -> Result<()> {
    if &manifest.model != expected {
        return Err(Error::Config(format!(
            "checkpoint was trained with {} but {} was requested",
            summary(&manifest.model),
            summary(expected)
        )));
    }
    Ok(())
}

fn summary(c: &ModelConfig) -> String {
    format!(
        "{}x{} {} (hidden {}, out {}, heads {})",
        c.encoder.layers, c.encoder.backbone, c.in_dim, c.encoder.hidden_dim, c.encoder.out_dim, c.encoder.heads
    )
}
