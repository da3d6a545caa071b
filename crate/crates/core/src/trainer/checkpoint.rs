//! Checkpoint container.
//!
//! ```text
//! offset  size   field
//! 0       8      magic "DVTACKPT"
//! 8       4 u32  version (1)
//! 12      4 u32  length n of the JSON model config
//! 16      n      model config, UTF-8 JSON
//! 16+n    4 u32  tensor count k
//! ..             k tensor blocks in binary64 feature-file layout, in
//!                `ModelParams::named_tensors` order
//! ..      4 u32  CRC32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::alignment::{ModelConfig, ModelParams};
use crate::dataio::format::{decode_matrix, encode_matrix, with_path, write_atomic, Precision};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DVTACKPT";
const VERSION: u32 = 1;

pub fn encode_checkpoint(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(config)?;
    let tensors = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, t) in tensors {
        out.extend_from_slice(&encode_matrix(t, Precision::F64));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let fmt = |at: usize, detail: String| Error::Format { offset: at as u64, detail };
    let u32_at = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| fmt(bytes.len(), format!("truncated: expected 4 bytes at offset {at}")))
    };

    if bytes.len() < 8 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt(0, "not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < 20 {
        return Err(fmt(bytes.len(), "truncated checkpoint".into()));
    }
    let body = bytes.len() - 4;
    let stored = u32_at(body)?;
    let actual = crc32fast::hash(&bytes[..body]);
    if stored != actual {
        return Err(fmt(body, format!("checkpoint checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let version = u32_at(8)?;
    if version != VERSION {
        return Err(fmt(8, format!("unsupported checkpoint version {version}")));
    }
    let n = u32_at(12)? as usize;
    let json = bytes.get(16..16 + n).ok_or_else(|| fmt(16, format!("config block of {n} bytes runs past end")))?;
    let config: ModelConfig = serde_json::from_slice(json)?;
    config.validate()?;

    let mut at = 16 + n;
    let count = u32_at(at)? as usize;
    at += 4;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, used) = decode_matrix(&bytes[at..body], at as u64)?;
        tensors.push(m);
        at += used;
    }
    if at != body {
        return Err(fmt(at, format!("{} unexpected bytes before checksum", body - at)));
    }
    let params = ModelParams::from_tensors(&config, tensors)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, params)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| with_path(e, path))
}
