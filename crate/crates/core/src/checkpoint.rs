//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header, then every tensor's values as little-endian `f64`.
//!
//! The header is the JSON form of [`Checkpoint`] with each tensor's `data`
//! replaced by an `offset`/`len` pair into the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::inference::{HistoryRecord, TrainConfig, TrainState};
use crate::model::BayesNet;

pub const MAGIC: &[u8; 8] = b"HSBNNCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: BayesNet,
    pub train: TrainConfig,
    /// Optimizer and RNG state; absent for a model that was never trained.
    pub state: Option<TrainState>,
    pub history: Vec<HistoryRecord>,
    /// Statistics the training data was standardized with, if any.
    pub standardization: Option<Standardization>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    payload_bytes: u64,
    checkpoint: Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut value = serde_json::to_value(self)?;
        extract_tensors(&mut value, &mut payload);
        let header = Header {
            format_version: FORMAT_VERSION,
            payload_bytes: payload.len() as u64,
            checkpoint: value,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not a checkpoint file (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(Error::format(
                path,
                format!("header needs {header_len} bytes, file has {}", body.len()),
            ));
        }
        let raw: Value = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::format(path, format!("corrupt header: {e}")))?;
        let version = raw.get("format_version").and_then(Value::as_u64);
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::format(
                path,
                format!(
                    "unsupported checkpoint version {}; this build reads version {FORMAT_VERSION}",
                    version.map_or("(missing)".to_string(), |v| v.to_string())
                ),
            ));
        }
        let header: Header =
            serde_json::from_value(raw).map_err(|e| Error::format(path, format!("corrupt header: {e}")))?;
        let payload = &body[header_len..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(Error::format(
                path,
                format!(
                    "payload is {} bytes, header expects {}",
                    payload.len(),
                    header.payload_bytes
                ),
            ));
        }
        let mut value = header.checkpoint;
        restore_tensors(&mut value, payload, path)?;
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::format(path, format!("checkpoint contents: {e}")))?;
        ckpt.validate(path)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        m.network.validate()?;
        m.prior.validate()?;
        let widths = &m.network.widths;
        if m.layers.len() != widths.len() - 1 {
            return Err(Error::format(path, "layer count does not match widths"));
        }
        for (l, layer) in m.layers.iter().enumerate() {
            let want = [widths[l] + 1, widths[l + 1]];
            if layer.mu.shape() != want || layer.rho.shape() != want {
                return Err(Error::format(
                    path,
                    format!(
                        "layer {l} weights have shape {:?}, widths imply {want:?}",
                        layer.mu.shape()
                    ),
                ));
            }
            for g in &layer.scales {
                if g.rho.shape() != g.mu.shape() || g.aux.len() != g.len() {
                    return Err(Error::format(path, format!("layer {l} scale group is inconsistent")));
                }
            }
        }
        Ok(())
    }
}

fn is_tensor(map: &Map<String, Value>) -> bool {
    map.len() == 2 && map.get("shape").is_some_and(Value::is_array) && map.get("data").is_some_and(Value::is_array)
}

fn extract_tensors(value: &mut Value, payload: &mut Vec<u8>) {
    match value {
        Value::Object(map) if is_tensor(map) => {
            let data = map.remove("data").expect("checked");
            let values = data.as_array().expect("checked");
            let offset = payload.len() as u64;
            for v in values {
                payload.extend_from_slice(&v.as_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
            map.insert("offset".into(), Value::from(offset));
            map.insert("len".into(), Value::from(values.len() as u64));
        }
        Value::Object(map) => map.values_mut().for_each(|v| extract_tensors(v, payload)),
        Value::Array(items) => items.iter_mut().for_each(|v| extract_tensors(v, payload)),
        _ => {}
    }
}

fn restore_tensors(value: &mut Value, payload: &[u8], path: &Path) -> Result<()> {
    match value {
        Value::Object(map)
            if map.len() == 3 && map.contains_key("shape") && map.contains_key("offset") && map.contains_key("len") =>
        {
            let offset = map["offset"].as_u64().unwrap_or(u64::MAX) as usize;
            let len = map["len"].as_u64().unwrap_or(u64::MAX) as usize;
            let end = len.checked_mul(8).and_then(|b| b.checked_add(offset));
            let bytes = end
                .and_then(|end| payload.get(offset..end))
                .ok_or_else(|| Error::format(path, format!("tensor at offset {offset} runs past the payload")))?;
            let data: Vec<Value> = bytes
                .chunks_exact(8)
                .map(|c| Value::from(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            map.remove("offset");
            map.remove("len");
            map.insert("data".into(), Value::Array(data));
            Ok(())
        }
        Value::Object(map) => map.values_mut().try_for_each(|v| restore_tensors(v, payload, path)),
        Value::Array(items) => items.iter_mut().try_for_each(|v| restore_tensors(v, payload, path)),
        _ => Ok(()),
    }
}
