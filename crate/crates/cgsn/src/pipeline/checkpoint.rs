//! Checkpoint directory layout:
//!   manifest.json — tensor names/shapes/offsets, config, vocab hash, metadata
//!   params.bin    — little-endian f64 payload, concatenated in manifest order
//!   vocab.txt     — one token per line (ids 4..)
//!
//! Loading then saving reproduces every byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocabulary;
use crate::model::{CgsnModel, ParamStore};
use crate::numerics::Tensor;
use crate::pipeline::config::ModelConfig;
use crate::{Error, Result};

const FORMAT: &str = "cgsn-checkpoint/1";

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainMeta {
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into params.bin.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    vocab_sha256: String,
    metadata: TrainMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &CgsnModel, meta: &TrainMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(model.store.len());
    let mut blob: Vec<u8> = Vec::with_capacity(model.store.total_elements() * 8);
    for (name, tensor) in model.store.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for x in tensor.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        vocab_sha256: model.vocab.sha256_hex(),
        metadata: meta.clone(),
        tensors: entries,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    std::fs::write(dir.join("manifest.json"), manifest_json)?;
    std::fs::write(dir.join("params.bin"), blob)?;
    std::fs::write(dir.join("vocab.txt"), model.vocab.to_file_string())?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CgsnModel, TrainMeta)> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    let vocab_text = std::fs::read_to_string(dir.join("vocab.txt"))
        .map_err(|e| Error::Checkpoint(format!("vocab.txt: {e}")))?;
    let vocab = Vocabulary::from_file_string(&vocab_text);
    if vocab.sha256_hex() != manifest.vocab_sha256 {
        return Err(Error::Checkpoint(
            "vocabulary hash does not match the manifest".into(),
        ));
    }
    let blob = std::fs::read(dir.join("params.bin"))
        .map_err(|e| Error::Checkpoint(format!("params.bin: {e}")))?;

    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} runs past the blob ({} > {})",
                entry.name,
                end,
                blob.len()
            )));
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        store.push(entry.name.clone(), Tensor::new(entry.shape.clone(), data));
    }
    let expected: usize = store.total_elements() * 8;
    if expected != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes but the manifest accounts for {expected}",
            blob.len()
        )));
    }
    manifest.config.validate()?;
    Ok((
        CgsnModel::from_store(manifest.config, vocab, store),
        manifest.metadata,
    ))
}
