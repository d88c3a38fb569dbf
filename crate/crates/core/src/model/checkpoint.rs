//! Binary parameter checkpoints and ensemble directories.
//!
//! A checkpoint is `TGCKPT01`, a little-endian `u32` header length, a JSON
//! header (format version, config hash, fold id, tensor directory) and the
//! tensors as little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{ModelDims, TrajectoryEncoderParams};
use super::tensor::Mat;
use super::train::{Ensemble, FoldModel, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TGCKPT01";
pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "ensemble.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub dims: ModelDims,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &FoldModel, dims: &ModelDims, config_hash: &str) -> Vec<u8> {
    let named = model.params.named();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        fold: model.fold,
        best_epoch: model.best_epoch,
        best_val_auc: model.best_val_auc,
        dims: *dims,
        tensors: named
            .iter()
            .map(|(n, m)| TensorEntry {
                name: n.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in named {
        for x in m.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, FoldModel)> {
    let bad = |m: &str| Error::invalid(format!("checkpoint: {m}"));
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    let mut data = &bytes[12 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.rows * t.cols;
        if data.len() < 8 * n {
            return Err(bad(&format!("tensor {} truncated", t.name)));
        }
        let values: Vec<f64> = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        let m = Mat::from_shape_vec((t.rows, t.cols), values).expect("shape matches length");
        tensors.push((t.name.clone(), m));
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let params = TrajectoryEncoderParams::from_named(&header.dims, &tensors)?;
    let model = FoldModel {
        fold: header.fold,
        best_epoch: header.best_epoch,
        best_val_auc: header.best_val_auc,
        params,
    };
    Ok((header, model))
}

pub fn save_checkpoint(path: &Path, model: &FoldModel, dims: &ModelDims, config_hash: &str) -> Result<()> {
    fs::write(path, encode_checkpoint(model, dims, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, FoldModel)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleManifest {
    format_version: u32,
    config_hash: String,
    config: TrainConfig,
    dims: ModelDims,
    members: Vec<String>,
}

/// Write `ensemble.json` plus one checkpoint per fold into `dir`.
pub fn save_ensemble(dir: &Path, ensemble: &Ensemble) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = ensemble.config.hash();
    let mut members = Vec::new();
    for m in &ensemble.members {
        let name = format!("fold_{}.ckpt", m.fold);
        save_checkpoint(&dir.join(&name), m, &ensemble.dims, &hash)?;
        members.push(name);
    }
    let manifest = EnsembleManifest {
        format_version: FORMAT_VERSION,
        config_hash: hash,
        config: ensemble.config.clone(),
        dims: ensemble.dims,
        members,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::parse(&path, "config hash does not match the stored config"));
    }
    let mut members = Vec::new();
    for name in &manifest.members {
        let p = dir.join(name);
        let (header, model) = load_checkpoint(&p)?;
        if header.config_hash != manifest.config_hash {
            return Err(Error::parse(&p, "checkpoint belongs to a different config"));
        }
        if header.dims != manifest.dims {
            return Err(Error::parse(&p, "checkpoint dimensions differ from the manifest"));
        }
        members.push(model);
    }
    if members.is_empty() {
        return Err(Error::parse(&path, "ensemble has no members"));
    }
    Ok(Ensemble {
        config: manifest.config,
        dims: manifest.dims,
        members,
    })
}
