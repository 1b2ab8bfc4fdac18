//! Checkpoint directory layout:
//!
//! * `params.bin` – every tensor as f32 little-endian, in manifest order
//! * `meta.json`  – architecture, seed, step, loss weights, tensor manifest

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::io::{read_json, write_json};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::{init_params, ArchitectureConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub set: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub architecture: ArchitectureConfig,
    pub seed: u64,
    pub step: usize,
    pub epoch: usize,
    pub weights: LossWeights,
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointMeta {
    pub fn new(params: &ModelParams<f32>, config: &TrainConfig, step: usize, epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            architecture: params.config.clone(),
            seed: config.seed,
            step,
            epoch,
            weights: config.weights,
            train_config: Some(config.clone()),
            tensors: manifest(params),
        }
    }
}

fn manifest(params: &ModelParams<f32>) -> Vec<TensorEntry> {
    params
        .sets()
        .iter()
        .flat_map(|(set, s)| {
            s.entries().iter().map(move |e| TensorEntry {
                set: set.to_string(),
                name: e.spec.name.clone(),
                shape: e.tensor.shape().to_vec(),
            })
        })
        .collect()
}

/// Writes `params.bin` and `meta.json` into `dir`, creating it if needed.
/// The tensor manifest in `meta` is replaced by the one of `params`.
pub fn save_checkpoint(params: &ModelParams<f32>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = meta.clone();
    meta.architecture = params.config.clone();
    meta.tensors = manifest(params);
    let bytes: Vec<u8> = params
        .sets()
        .iter()
        .flat_map(|(_, s)| s.entries().iter())
        .flat_map(|e| e.tensor.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    let path = dir.join("params.bin");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("meta.json"), &meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams<f32>, CheckpointMeta)> {
    let meta_path = dir.join("meta.json");
    let meta: CheckpointMeta = read_json(&meta_path)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Malformed {
            file: meta_path,
            reason: format!("unsupported checkpoint version {}", meta.version),
        });
    }
    let mut params = init_params::<f32>(&meta.architecture, 0)?;
    let expected = manifest(&params);
    if expected != meta.tensors {
        let detail = expected
            .iter()
            .zip(&meta.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {}.{} {:?}, found {}.{} {:?}", a.set, a.name, a.shape, b.set, b.name, b.shape))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), meta.tensors.len()));
        return Err(Error::Shape(format!("checkpoint layout does not match its architecture: {detail}")));
    }
    let bin = dir.join("params.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::SizeMismatch {
            file: bin,
            expected: (total * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for set in [
        &mut params.conditioning,
        &mut params.generator,
        &mut params.discriminator,
        &mut params.regressor,
    ] {
        for i in 0..set.len() {
            let shape = set.tensor(i).shape().to_vec();
            let n: usize = shape.iter().product();
            let data: Vec<f32> = values.by_ref().take(n).collect();
            *set.tensor_mut(i) = Tensor::from_vec(&shape, data);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("{} contains non-finite values", bin.display())));
    }
    Ok((params, meta))
}

/// Loads a checkpoint and requires it to match `expected`.
pub fn load_checkpoint_for(
    dir: &Path,
    expected: &ArchitectureConfig,
) -> Result<(ModelParams<f32>, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(dir)?;
    if &meta.architecture != expected {
        return Err(Error::Shape(format!(
            "checkpoint architecture {:?} does not match the requested {:?}",
            meta.architecture, expected
        )));
    }
    Ok((params, meta))
}
