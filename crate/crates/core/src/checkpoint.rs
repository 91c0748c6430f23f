//! Self-describing tensor container: `RDK1`, a little-endian `u32` header
//! length, a JSON header, then the little-endian `f32` payload.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::{BackboneWeights, ModelConfig};
use crate::fusion::{MergeMethod, MergedDelta, RouterParams, StaticCoeffs};
use crate::lora::{ExpertKind, LoraAdapter};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"RDK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    Kind { expected: CheckpointKind, found: CheckpointKind },
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Backbone,
    Adapter,
    Router,
    Static,
    TiesMerged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub model_config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the payload bytes.
    pub content_hash: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Serializes tensors in the given order.
pub fn encode(
    kind: CheckpointKind,
    model_config: &ModelConfig,
    tensors: &[(String, &Tensor<f32>)],
    meta: serde_json::Value,
) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f32".into(), byte_offset: payload.len() });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind,
        model_config: model_config.clone(),
        tensors: entries,
        content_hash: hex::encode(Sha256::digest(&payload)),
        meta,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor<f32>)>), CheckpointError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
    let version: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(CheckpointError::UnsupportedVersion(v as u32)),
        None => return Err(CheckpointError::Corrupt("missing format_version".into())),
    }
    let header: Header = serde_json::from_value(version).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let payload = &bytes[8 + len..];
    if hex::encode(Sha256::digest(payload)) != header.content_hash {
        return Err(CheckpointError::Corrupt("payload hash mismatch".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = payload
            .get(e.byte_offset..e.byte_offset + 4 * n)
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {} out of range", e.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
        tensors.push((e.name.clone(), t));
    }
    Ok((header, tensors))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read(path: &Path) -> Result<(Header, Vec<(String, Tensor<f32>)>), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

/// Reads a checkpoint and checks its kind.
pub fn read_kind(path: &Path, expected: CheckpointKind) -> Result<(Header, Vec<Tensor<f32>>), CheckpointError> {
    let (header, tensors) = read(path)?;
    if header.kind != expected {
        return Err(CheckpointError::Kind { expected, found: header.kind });
    }
    Ok((header, tensors.into_iter().map(|(_, t)| t).collect()))
}

fn meta_field<T: serde::de::DeserializeOwned>(header: &Header, key: &str) -> Result<T, CheckpointError> {
    let v = header.meta.get(key).ok_or_else(|| CheckpointError::Meta(format!("missing {key}")))?;
    serde_json::from_value(v.clone()).map_err(|e| CheckpointError::Meta(format!("{key}: {e}")))
}

pub fn save_backbone(path: &Path, w: &BackboneWeights<f32>) -> Result<String, CheckpointError> {
    let meta = serde_json::json!({ "frozen_hash": w.frozen_hash() });
    let bytes = encode(CheckpointKind::Backbone, &w.config, &w.named_params().into_iter().map(|(n, t)| (n, t)).collect::<Vec<_>>(), meta);
    write(path, &bytes)?;
    Ok(w.content_hash())
}

/// Loads and freezes a backbone; a recorded frozen hash must still match.
pub fn load_backbone(path: &Path) -> Result<BackboneWeights<f32>, crate::Error> {
    let (header, tensors) = read_kind(path, CheckpointKind::Backbone)?;
    let mut w = BackboneWeights::from_params(&header.model_config, tensors)?;
    let hash = w.freeze();
    if let Some(expected) = header.meta.get("frozen_hash").and_then(|v| v.as_str()) {
        if expected != hash {
            return Err(CheckpointError::Corrupt("backbone hash differs from the recorded frozen hash".into()).into());
        }
    }
    Ok(w)
}

pub fn save_adapter(path: &Path, model: &ModelConfig, kind: ExpertKind, a: &LoraAdapter<f32>) -> Result<String, CheckpointError> {
    let meta = serde_json::json!({ "expert": kind, "rank": a.rank, "scale": a.scale });
    write(path, &encode(CheckpointKind::Adapter, model, &a.named_params(), meta))?;
    Ok(a.content_hash())
}

pub fn load_adapter(path: &Path) -> Result<(ModelConfig, ExpertKind, LoraAdapter<f32>), crate::Error> {
    let (header, tensors) = read_kind(path, CheckpointKind::Adapter)?;
    let kind = meta_field(&header, "expert")?;
    let adapter = LoraAdapter::from_params(meta_field(&header, "rank")?, meta_field(&header, "scale")?, tensors)?;
    Ok((header.model_config, kind, adapter))
}

pub fn save_router(path: &Path, model: &ModelConfig, r: &RouterParams<f32>, meta: serde_json::Value) -> Result<String, CheckpointError> {
    write(path, &encode(CheckpointKind::Router, model, &r.named_params(), meta))?;
    Ok(r.content_hash())
}

pub fn load_router(path: &Path) -> Result<(Header, RouterParams<f32>), CheckpointError> {
    let (header, tensors) = read_kind(path, CheckpointKind::Router)?;
    Ok((header, RouterParams::from_params(tensors)))
}

pub fn save_static(path: &Path, model: &ModelConfig, s: &StaticCoeffs<f32>, meta: serde_json::Value) -> Result<String, CheckpointError> {
    write(path, &encode(CheckpointKind::Static, model, &s.named_params(), meta))?;
    Ok(s.content_hash())
}

pub fn load_static(path: &Path) -> Result<(Header, StaticCoeffs<f32>), CheckpointError> {
    let (header, gamma) = read_kind(path, CheckpointKind::Static)?;
    Ok((header, StaticCoeffs { gamma }))
}

pub fn save_merged(path: &Path, model: &ModelConfig, m: &MergedDelta<f32>) -> Result<String, CheckpointError> {
    let meta = serde_json::json!({ "merge": m.method });
    write(path, &encode(CheckpointKind::TiesMerged, model, &m.named_params(), meta))?;
    Ok(m.content_hash())
}

pub fn load_merged(path: &Path) -> Result<MergedDelta<f32>, crate::Error> {
    let (header, tensors) = read_kind(path, CheckpointKind::TiesMerged)?;
    let method: MergeMethod = meta_field(&header, "merge")?;
    Ok(MergedDelta::from_params(method, tensors)?)
}
