//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "OCEMBCK1"
//! version      u32      1
//! header_len   u32
//! header       JSON     {"encoder": EncoderConfig, "param_count": n, "config_hash": ..}
//! params       n x f32
//! checksum     32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderConfig, EncoderState};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OCEMBCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub encoder: EncoderConfig,
    pub param_count: usize,
    /// Hash of the experiment configuration that produced the weights.
    pub config_hash: String,
}

pub fn checkpoint_bytes(state: &EncoderState, config_hash: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        encoder: state.config().clone(),
        param_count: state.params().len(),
        config_hash: config_hash.to_string(),
    };
    let header = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * state.params().len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &p in state.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(EncoderState, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 + 32 {
        return Err(bad("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if body.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[16..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let raw = &body[header_end..];
    if raw.len() != 4 * header.param_count {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            raw.len()
        )));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let state = EncoderState::from_params(header.encoder.clone(), params)?;
    Ok((state, header))
}

pub fn save_checkpoint(path: &Path, state: &EncoderState, config_hash: &str) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(state, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderState, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
