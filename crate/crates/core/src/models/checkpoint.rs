//! Checkpoint layout: `b"RSTK"`, u32 LE format version, u32 LE header length,
//! UTF-8 JSON header, then every parameter as f64 LE.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, ModelConfig, SequentialModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RSTK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: Arch,
    pub n_items: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub epoch: usize,
    pub n_params: usize,
    pub config: ModelConfig,
}

pub fn save_checkpoint(model: &SequentialModel, epoch: usize, path: &Path) -> Result<()> {
    let cfg = model.config();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        arch: cfg.arch,
        n_items: model.n_items(),
        embed_dim: cfg.embed_dim,
        max_seq_len: cfg.max_seq_len,
        seed: cfg.seed,
        epoch,
        n_params: model.n_params(),
        config: *cfg,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * model.n_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.parameters() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SequentialModel, CheckpointHeader)> {
    let buf = fs::read(path)?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let body = buf
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let raw = &buf[12 + hlen..];
    if raw.len() != 8 * header.n_params {
        return Err(bad("parameter block length mismatch"));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = SequentialModel::from_parts(header.config, header.n_items, params)?;
    Ok((model, header))
}
