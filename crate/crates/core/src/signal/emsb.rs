//! Preprocessed batch files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMSB" | u32 version | u64 header_len | JSON header | f32 data[B·T·D] | i32 labels[B·T]?
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchMeta, Label, SequenceBatch, SignalError, WindowFn};

pub const EMSB_MAGIC: &[u8; 4] = b"EMSB";
pub const EMSB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    batch: usize,
    seq_len: usize,
    dim: usize,
    has_labels: bool,
    window: Option<usize>,
    hop: Option<usize>,
    window_fn: Option<WindowFn>,
    class_map: BTreeMap<Label, String>,
    source_ids: Vec<String>,
}

pub fn encode_batch(batch: &SequenceBatch) -> Vec<u8> {
    let header = Header {
        batch: batch.batch(),
        seq_len: batch.seq_len(),
        dim: batch.dim(),
        has_labels: batch.labels().is_some(),
        window: batch.meta.window,
        hop: batch.meta.hop,
        window_fn: batch.meta.window_fn,
        class_map: batch.meta.class_map.clone(),
        source_ids: batch.meta.source_ids.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + batch.data().len() * 4 + batch.num_steps() * 4);
    out.extend_from_slice(EMSB_MAGIC);
    out.extend_from_slice(&EMSB_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in batch.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = batch.labels() {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Result<SequenceBatch, SignalError> {
    let fmt = |m: String| SignalError::Format(m);
    if bytes.len() < 16 {
        return Err(fmt(format!("{} bytes is too short for a header", bytes.len())));
    }
    if &bytes[..4] != EMSB_MAGIC {
        return Err(fmt(format!("expected magic \"EMSB\", found {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMSB_VERSION {
        return Err(fmt(format!("unsupported version {version}, expected {EMSB_VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if hlen > body.len() as u64 {
        return Err(fmt("truncated header".into()));
    }
    let (json, payload) = body.split_at(hlen as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| fmt(format!("header: {e}")))?;
    let n = header
        .batch
        .checked_mul(header.seq_len)
        .and_then(|s| s.checked_mul(header.dim))
        .ok_or_else(|| fmt("shape overflows".into()))?;
    let steps = header.batch * header.seq_len;
    let expected = n * 4 + if header.has_labels { steps * 4 } else { 0 };
    if payload.len() != expected {
        return Err(fmt(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let (values, label_bytes) = payload.split_at(n * 4);
    let data = values
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let labels = header.has_labels.then(|| {
        label_bytes
            .chunks_exact(4)
            .map(|c| Label::from_le_bytes(c.try_into().unwrap()))
            .collect()
    });
    let meta = BatchMeta {
        source_ids: header.source_ids,
        window: header.window,
        hop: header.hop,
        window_fn: header.window_fn,
        class_map: header.class_map,
    };
    SequenceBatch::new(header.batch, header.seq_len, header.dim, data, labels, meta)
}

pub fn write_batch(batch: &SequenceBatch, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let path = path.as_ref();
    std::fs::write(path, encode_batch(batch)).map_err(|e| SignalError::io(path, e))
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<SequenceBatch, SignalError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SignalError::io(path, e))?;
    decode_batch(&bytes)
}
