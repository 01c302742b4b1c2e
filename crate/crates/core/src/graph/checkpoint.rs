//! Parameter checkpoints: a JSON manifest next to a little-endian `f64` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GraphError, ParamSet, Tensor};

const FORMAT: &str = "emomsase-params-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the blob, in values (not bytes).
    pub offset: usize,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub blob: String,
    pub params: Vec<CheckpointEntry>,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (JSON manifest) and `<path>.bin` (parameter values).
pub fn save_checkpoint(
    params: &ParamSet,
    path: &Path,
    seed: u64,
    config_hash: &str,
) -> Result<CheckpointManifest, GraphError> {
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(params.num_values() * 8);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for p in params.iter() {
        let (r, c) = p.values.shape();
        entries.push(CheckpointEntry {
            name: p.name.clone(),
            shape: [r, c],
            offset,
            frozen: p.frozen,
        });
        for v in p.values.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.values.len();
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params: entries,
    };
    fs::write(&blob, &bytes)?;
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, CheckpointManifest), GraphError> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != FORMAT {
        return Err(GraphError::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let blob_file = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_file)?;
    if bytes.len() % 8 != 0 {
        return Err(GraphError::Checkpoint("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let mut params = ParamSet::new();
    for e in &manifest.params {
        let n = e.shape[0] * e.shape[1];
        let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
            GraphError::Checkpoint(format!("parameter {:?} extends past the blob", e.name))
        })?;
        params.add(e.name.clone(), Tensor::matrix(e.shape[0], e.shape[1], slice.to_vec())?)?;
        if e.frozen {
            params.freeze(&e.name)?;
        }
    }
    Ok((params, manifest))
}
