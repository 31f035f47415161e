//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "TDCKPT01"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { "encoder": EncoderConfig, "input_dim": n,
//!                "temporal": HeadConfig, "binning": TimeBinning | null,
//!                "tensors": [{ "name": s, "len": n }, ...] }
//! payload      every tensor in header order, each entry an IEEE-754
//!              binary64 in little-endian byte order
//! ```
//!
//! Tensor order is [`Model::slots`] order. Loading restores every value
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::splits::TimeBinning;
use crate::temporal::{HeadConfig, TemporalHead};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDCKPT01";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    input_dim: usize,
    temporal: HeadConfig,
    binning: Option<TimeBinning>,
    tensors: Vec<TensorMeta>,
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let slots = model.slots();
    let header = Header {
        encoder: model.encoder.config.clone(),
        input_dim: model.encoder.input_dim,
        temporal: model.head.config().clone(),
        binning: model.head.binning().cloned(),
        tensors: slots.iter().map(|(name, _, t)| TensorMeta { name: name.to_string(), len: t.len() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + slots.iter().map(|s| s.2.len() * 8).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in slots {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    crate::experiment::write_atomic(path, &checkpoint_bytes(model))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut pos = 16 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let end = pos + meta.len * 8;
        let raw = bytes.get(pos..end).ok_or_else(|| bad("truncated payload"))?;
        tensors.push(
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<f64>>(),
        );
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    if tensors.len() < 5 {
        return Err(bad("fewer than five encoder tensors"));
    }
    let head_tensors = tensors.split_off(5);
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("five tensors");
    let encoder = EncoderParams {
        config: header.encoder,
        input_dim: header.input_dim,
        embedding: next(),
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
    };
    let (v, d, h, c) = (
        encoder.config.hash_buckets as usize,
        encoder.dim(),
        encoder.hidden_dim(),
        encoder.n_classes(),
    );
    if encoder.embedding.len() != v * d
        || encoder.w1.len() != h * encoder.input_dim
        || encoder.b1.len() != h
        || encoder.w2.len() != c * h
        || encoder.b2.len() != c
    {
        return Err(bad("encoder tensor shapes do not match the config"));
    }
    let head = TemporalHead::from_parts(header.temporal, header.binning, d, head_tensors)?;
    if encoder.input_dim != d + head.extra_input_dim() {
        return Err(bad("classifier input width does not match the head"));
    }
    Ok(Model::new(encoder, head))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
