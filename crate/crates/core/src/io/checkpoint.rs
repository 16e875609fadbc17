//! Checkpoint directory: `manifest.json`, `params.bin` (little-endian
//! tensors in manifest order) and, when present, `tokenizer.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_bytes, read_text, IoError};
use crate::model::bpe::BpeTokenizer;
use crate::model::{EgoVideo, Group, ModelConfig, ParamEntry, ParamStore};
use crate::num::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const TOKENIZER_FILE: &str = "tokenizer.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub dtype: String,
    pub params: Vec<ManifestEntry>,
    pub total_bytes: usize,
}

fn dtype_bytes(dtype: &str) -> Result<usize, IoError> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(IoError::Corrupt(format!("unknown dtype {other:?}"))),
    }
}

pub fn save_checkpoint<S: Scalar>(model: &EgoVideo<S>, tokenizer: Option<&BpeTokenizer>, dir: &Path) -> Result<Manifest, IoError> {
    let mut blob = Vec::new();
    let mut params = Vec::new();
    for e in model.store().entries() {
        params.push(ManifestEntry {
            name: e.name.clone(),
            group: e.group,
            shape: e.value.shape().to_vec(),
            offset: blob.len(),
            dtype: S::DTYPE.to_string(),
        });
        for v in e.value.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        dtype: S::DTYPE.to_string(),
        params,
        total_bytes: blob.len(),
    };
    atomic_write(&dir.join(PARAMS_FILE), &blob)?;
    if let Some(t) = tokenizer {
        atomic_write(&dir.join(TOKENIZER_FILE), t.to_json().as_bytes())?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn read_value(bytes: &[u8], dtype: &str) -> f64 {
    match dtype {
        "f32" => f64::from(f32::read_le(bytes)),
        _ => f64::read_le(bytes),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_text(&path)?;
    // Check the version before the strict schema so newer files get the
    // right error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| IoError::Corrupt(format!("{}: {e}", path.display())))?;
    let found = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found > FORMAT_VERSION || found == 0 {
        return Err(IoError::UnsupportedVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| IoError::Corrupt(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint into a model of scalar type `S`. Values stored in
/// the same dtype come back bit-identical; others are converted.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(EgoVideo<S>, Option<BpeTokenizer>), IoError> {
    let manifest = read_manifest(dir)?;
    let blob = read_bytes(&dir.join(PARAMS_FILE))?;
    if blob.len() != manifest.total_bytes {
        return Err(IoError::Corrupt(format!(
            "{PARAMS_FILE} has {} bytes, manifest expects {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut expected = 0usize;
    let mut entries = Vec::with_capacity(manifest.params.len());
    for p in &manifest.params {
        let width = dtype_bytes(&p.dtype)?;
        if p.offset != expected {
            return Err(IoError::Corrupt(format!(
                "tensor {} starts at byte {}, expected {expected}",
                p.name, p.offset
            )));
        }
        let n: usize = p.shape.iter().product();
        let end = expected + n * width;
        if end > blob.len() {
            return Err(IoError::Corrupt(format!(
                "tensor {} ends at byte {end}, blob has {}",
                p.name,
                blob.len()
            )));
        }
        let data: Vec<S> = blob[expected..end]
            .chunks(width)
            .map(|c| {
                if p.dtype == S::DTYPE {
                    S::read_le(c)
                } else {
                    S::of(read_value(c, &p.dtype))
                }
            })
            .collect();
        entries.push(ParamEntry {
            name: p.name.clone(),
            group: p.group,
            value: Tensor::new(p.shape.clone(), data).map_err(|e| IoError::Corrupt(e.to_string()))?,
        });
        expected = end;
    }
    if expected != blob.len() {
        return Err(IoError::Corrupt(format!(
            "tensors cover {expected} bytes, blob has {}",
            blob.len()
        )));
    }
    let store = ParamStore::from_entries(entries).map_err(|e| IoError::Corrupt(e.to_string()))?;
    let model = EgoVideo::from_store(manifest.config.clone(), &store).map_err(|e| IoError::Corrupt(e.to_string()))?;
    let tok_path = dir.join(TOKENIZER_FILE);
    let tokenizer = if tok_path.exists() {
        Some(BpeTokenizer::from_json(&read_text(&tok_path)?).map_err(|e| IoError::Corrupt(e.to_string()))?)
    } else {
        None
    };
    Ok((model, tokenizer))
}
