//! Parameter checkpoints: `checkpoint.json` maps parameter names to shapes
//! and offsets inside `checkpoint.bin`, a single rank-1 blob in the bundle
//! blob format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::bundle::blob;
use crate::error::{Result, TecoError};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_INDEX: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "checkpoint.bin";
const FORMAT: &str = "teco-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    version: u32,
    blob: String,
    sha256: String,
    params: Vec<Entry>,
}

/// Write every parameter of `store` into `dir` as 32-bit floats.
pub fn save_checkpoint<T: Real>(dir: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| TecoError::io(dir, e))?;
    let mut flat: Vec<f32> = Vec::with_capacity(store.numel());
    let mut params = Vec::with_capacity(store.len());
    for p in store.iter() {
        params.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: flat.len(),
        });
        flat.extend(p.value.data().iter().map(|v| v.as_f64() as f32));
    }
    let bytes = blob::encode(&[flat.len()], [flat.as_slice()])?;
    blob::write_file(&dir.join(CHECKPOINT_BLOB), &bytes)?;
    let index = Index {
        format: FORMAT.into(),
        version: VERSION,
        blob: CHECKPOINT_BLOB.into(),
        sha256: blob::sha256_hex(&bytes),
        params,
    };
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| TecoError::Data(format!("checkpoint index: {e}")))?;
    blob::write_file(&dir.join(CHECKPOINT_INDEX), json.as_bytes())
}

/// Overwrite the values in `store` from a checkpoint. The checkpoint must
/// hold exactly the same parameter names and shapes.
pub fn load_checkpoint<T: Real>(dir: impl AsRef<Path>, store: &mut ParamStore<T>) -> Result<()> {
    let dir = dir.as_ref();
    let text = blob::read_file(&dir.join(CHECKPOINT_INDEX))?;
    let index: Index = serde_json::from_slice(&text)
        .map_err(|e| TecoError::Data(format!("checkpoint index parse: {e}")))?;
    if index.format != FORMAT || index.version != VERSION {
        return Err(TecoError::Data(format!(
            "unknown checkpoint format {} version {}",
            index.format, index.version
        )));
    }
    let bytes = blob::read_file(&dir.join(&index.blob))?;
    if blob::sha256_hex(&bytes) != index.sha256 {
        return Err(TecoError::Data(format!(
            "checksum mismatch in {}",
            index.blob
        )));
    }
    let b = blob::decode(&bytes, &index.blob)?;
    if index.params.len() != store.len() {
        return Err(TecoError::Data(format!(
            "checkpoint has {} parameters, model has {}",
            index.params.len(),
            store.len()
        )));
    }
    for e in &index.params {
        let p = store.by_name_mut(&e.name).ok_or_else(|| {
            TecoError::Data(format!("checkpoint parameter {} not in model", e.name))
        })?;
        if p.value.shape() != e.shape.as_slice() {
            return Err(TecoError::Data(format!(
                "checkpoint parameter {} has shape {:?}, model expects {:?}",
                e.name,
                e.shape,
                p.value.shape()
            )));
        }
        let n = p.value.numel();
        let data = b.values.get(e.offset..e.offset + n).ok_or_else(|| {
            TecoError::Data(format!(
                "checkpoint parameter {} runs past the blob",
                e.name
            ))
        })?;
        p.value = Tensor::new(
            e.shape.clone(),
            data.iter().map(|&v| T::lit(f64::from(v))).collect(),
        )?;
    }
    Ok(())
}
