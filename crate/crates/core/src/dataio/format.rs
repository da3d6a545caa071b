//! `DVTA` tensor files.
//!
//! Layout, little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "DVTA"
//! 4       4  u32      version (1 = binary32 payload, 2 = binary64 payload)
//! 8       4  u32      rows
//! 12      4  u32      cols
//! 16      rows*cols*w payload, row-major
//! ..      4  u32      CRC32 (IEEE) of the payload bytes
//! ```
//!
//! Feature files are always version 1. Checkpoints embed version 2 blocks so
//! that trained parameters survive a save/load cycle exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub const MAGIC: [u8; 4] = *b"DVTA";
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn encode_matrix(m: &Matrix, precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * precision.width() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&precision.version().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    let start = out.len();
    match precision {
        Precision::F32 => {
            for &x in m.as_slice() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes one tensor block from the front of `bytes`. `base` is the block's
/// offset inside the enclosing file and is only used for error messages.
/// Returns the matrix and the number of bytes consumed.
pub fn decode_matrix(bytes: &[u8], base: u64) -> Result<(Matrix, usize)> {
    let fmt = |at: usize, detail: String| Error::Format { offset: base + at as u64, detail };

    if bytes.len() < HEADER_LEN {
        return Err(fmt(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if bytes[..4] != MAGIC {
        return Err(fmt(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    let precision = match read_u32(bytes, 4) {
        1 => Precision::F32,
        2 => Precision::F64,
        v => return Err(fmt(4, format!("unsupported version {v}"))),
    };
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(precision.width()))
        .ok_or_else(|| fmt(8, format!("shape {rows}x{cols} overflows")))?;
    let expected = HEADER_LEN + payload_len + 4;
    if bytes.len() < expected {
        return Err(fmt(
            bytes.len(),
            format!(
                "truncated: expected {expected} bytes for a {rows}x{cols} tensor, found {}",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = read_u32(bytes, HEADER_LEN + payload_len);
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(fmt(
            HEADER_LEN + payload_len,
            format!("payload checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }

    let data: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        return Err(fmt(
            HEADER_LEN + pos * precision.width(),
            format!("non-finite value at element {pos}"),
        ));
    }
    Ok((Matrix::from_raw(rows, cols, data), expected))
}

/// Reads a feature file and checks there is nothing after the trailer.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, used) = decode_matrix(&bytes, 0).map_err(|e| with_path(e, path))?;
    if used != bytes.len() {
        return Err(with_path(
            Error::Format {
                offset: used as u64,
                detail: format!("{} trailing bytes after checksum", bytes.len() - used),
            },
            path,
        ));
    }
    Ok(m)
}

/// Writes `m` as a binary32 feature file.
pub fn save_feature_file(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m, Precision::F32)).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, detail } => Error::Format {
            offset,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    }
}
