//! Weight container: an 8-byte little-endian manifest length, a UTF-8 JSON
//! manifest mapping tensor names to `{shape, dtype, offset, length}`, then a
//! single little-endian `f32` blob. Offsets and lengths are in bytes relative
//! to the start of the blob. Model dimensions and the word table travel in
//! the reserved `__metadata__` manifest entry.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::config::ModelConfig;
use super::vocab::Vocabulary;
use super::weights::{Layer, Model};

pub const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    vocab: Vocabulary,
}

/// Serializes a model into the container format.
pub fn encode_model(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut manifest = serde_json::Map::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, shape, data) in model.named_tensors() {
        let entry = TensorEntry {
            shape,
            dtype: "f32".into(),
            offset: blob.len() as u64,
            length: (data.len() * 4) as u64,
        };
        for x in data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        manifest.insert(name, serde_json::to_value(entry)?);
    }
    let meta = Metadata {
        config: model.config().clone(),
        vocab: model.vocab().clone(),
    };
    manifest.insert(METADATA_KEY.into(), serde_json::to_value(meta)?);
    let header = serde_json::to_vec(&Value::Object(manifest))?;
    let mut out = Vec::with_capacity(8 + header.len() + blob.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Parses the container format.
pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let prefix: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format("<header>", "file shorter than the 8-byte length prefix"))?;
    let header_len = usize::try_from(u64::from_le_bytes(prefix))
        .map_err(|_| Error::format("<header>", "manifest length overflows"))?;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::format("<header>", "manifest length exceeds file size"))?;
    let manifest: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::format("<header>", format!("malformed manifest: {e}")))?;
    let blob = &bytes[header_end..];

    let meta: Metadata = manifest
        .get(METADATA_KEY)
        .cloned()
        .ok_or_else(|| Error::format(METADATA_KEY, "missing"))
        .and_then(|v| {
            serde_json::from_value(v).map_err(|e| Error::format(METADATA_KEY, e.to_string()))
        })?;
    let cfg = meta.config;
    cfg.validate()
        .map_err(|e| Error::format(METADATA_KEY, e.to_string()))?;

    let mut entries: BTreeMap<&str, TensorEntry> = BTreeMap::new();
    let mut covered = 0u64;
    for (name, v) in &manifest {
        if name == METADATA_KEY {
            continue;
        }
        let entry: TensorEntry = serde_json::from_value(v.clone())
            .map_err(|e| Error::format(name.as_str(), format!("malformed entry: {e}")))?;
        if entry.dtype != "f32" {
            return Err(Error::format(name.as_str(), format!("unsupported dtype {}", entry.dtype)));
        }
        let elems: usize = entry.shape.iter().product();
        if entry.length != (elems as u64) * 4 {
            return Err(Error::format(
                name.as_str(),
                format!("shape {:?} needs {} bytes, entry says {}", entry.shape, elems * 4, entry.length),
            ));
        }
        let end = entry.offset.checked_add(entry.length);
        if end.is_none_or(|end| end > blob.len() as u64) {
            return Err(Error::format(name.as_str(), "blob truncated"));
        }
        covered += entry.length;
        entries.insert(name.as_str(), entry);
    }
    if covered != blob.len() as u64 {
        return Err(Error::format(
            "<blob>",
            format!("manifest covers {covered} bytes but blob holds {}", blob.len()),
        ));
    }

    let read = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let entry = entries
            .get(name)
            .ok_or_else(|| Error::format(name, "missing from manifest"))?;
        if entry.shape != shape {
            return Err(Error::format(
                name,
                format!("expected shape {shape:?}, found {:?}", entry.shape),
            ));
        }
        let start = entry.offset as usize;
        let end = start + entry.length as usize;
        Ok(blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let mat = |name: &str, r: usize, c: usize| -> Result<Matrix<f32>> {
        Matrix::new(r, c, read(name, &[r, c])?).map_err(|e| Error::format(name, e.to_string()))
    };

    let d = cfg.d_model;
    let tok = mat("embed.tok", cfg.vocab_size, d)?;
    let pos = mat("embed.pos", cfg.max_seq_len, d)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        layers.push(Layer {
            wq: mat(&format!("layers.{i}.wq"), d, d)?,
            wk: mat(&format!("layers.{i}.wk"), d, d)?,
            wv: mat(&format!("layers.{i}.wv"), d, d)?,
            wo: mat(&format!("layers.{i}.wo"), d, d)?,
            norm1: read(&format!("layers.{i}.norm1"), &[d])?,
            norm2: read(&format!("layers.{i}.norm2"), &[d])?,
            mlp_w1: mat(&format!("layers.{i}.mlp.w1"), d, cfg.d_ff)?,
            mlp_w2: mat(&format!("layers.{i}.mlp.w2"), cfg.d_ff, d)?,
        });
    }
    let unembed = mat("unembed", d, cfg.vocab_size)?;
    if entries.len() != 3 + 8 * cfg.n_layers {
        let known: Vec<String> = Model::<f32>::new(
            cfg.clone(),
            meta.vocab.clone(),
            tok.clone(),
            pos.clone(),
            layers.clone(),
            unembed.clone(),
        )?
        .named_tensors()
        .into_iter()
        .map(|t| t.0)
        .collect();
        let extra = entries
            .keys()
            .find(|k| !known.iter().any(|n| n == *k))
            .map(|s| s.to_string())
            .unwrap_or_default();
        return Err(Error::format(extra, "unexpected tensor"));
    }
    Model::new(cfg, meta.vocab, tok, pos, layers, unembed)
}
