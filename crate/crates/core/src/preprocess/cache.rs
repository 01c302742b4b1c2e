//! On-disk cache of windowed tensors.
//!
//! Binary layout: `T: u32 LE`, `F: u32 LE`, then `T·F` little-endian `f64`
//! in row-major order. A JSON sidecar (`.json`) carries the source metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChannelProfile, PreprocessError, TensorSource, WindowedTensor};
use crate::dataio::RawRecording;
use crate::graph::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub source: TensorSource,
    pub windows: usize,
    pub window_len: usize,
    pub key: String,
}

/// Content hash of a recording plus the profile applied to it.
pub fn cache_key(rec: &RawRecording, profile: &ChannelProfile) -> String {
    let mut h = Sha256::new();
    h.update(rec.participant_id.as_bytes());
    h.update([0]);
    h.update(rec.video_id.as_bytes());
    h.update([0]);
    h.update(rec.channel.as_bytes());
    h.update(rec.sample_rate_hz.to_le_bytes());
    for s in rec.samples() {
        h.update(s.timestamp_ms.to_le_bytes());
        h.update(s.value.to_le_bytes());
    }
    h.update(serde_json::to_vec(profile).expect("profile serializes"));
    hex::encode(h.finalize())
}

fn paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{key}.bin")), dir.join(format!("{key}.json")))
}

pub fn write_cached(dir: &Path, key: &str, tensor: &WindowedTensor) -> Result<(), PreprocessError> {
    fs::create_dir_all(dir)?;
    let (bin, json) = paths(dir, key);
    let (t, f) = tensor.values.shape();
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| PreprocessError::Cache(format!("dimension {v} exceeds u32")));
    let mut bytes = Vec::with_capacity(8 + 8 * t * f);
    bytes.extend_from_slice(&to_u32(t)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(f)?.to_le_bytes());
    for v in tensor.values.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    let sidecar = CacheSidecar {
        source: tensor.source.clone(),
        windows: t,
        window_len: f,
        key: key.to_string(),
    };
    fs::write(json, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Returns `Ok(None)` when no entry exists for `key`.
pub fn read_cached(dir: &Path, key: &str) -> Result<Option<WindowedTensor>, PreprocessError> {
    let (bin, json) = paths(dir, key);
    if !bin.exists() || !json.exists() {
        return Ok(None);
    }
    let sidecar: CacheSidecar = serde_json::from_slice(&fs::read(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() < 8 {
        return Err(PreprocessError::Cache(format!("{key}: truncated header")));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let f = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 8 * t * f || (t, f) != (sidecar.windows, sidecar.window_len) {
        return Err(PreprocessError::Cache(format!("{key}: size does not match header")));
    }
    let data = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let values = Tensor::matrix(t, f, data).map_err(|e| PreprocessError::Cache(e.to_string()))?;
    Ok(Some(WindowedTensor {
        values,
        source: sidecar.source,
    }))
}
