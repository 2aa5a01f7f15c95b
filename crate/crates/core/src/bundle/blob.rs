//! Binary blob layout shared by feature bundles and checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TECO"
//! 4       2     version (u16 LE)
//! 6       2     rank (u16 LE)
//! 8       4*r   per-record dims (u32 LE each)
//! ...           records as consecutive little-endian f32 runs
//! ```
//!
//! With the rank-2 per-record shapes used by bundles the header is 16 bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Result, TecoError};

pub const MAGIC: &[u8; 4] = b"TECO";
pub const VERSION: u16 = 1;

pub fn header_len(rank: usize) -> usize {
    8 + 4 * rank
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialize a blob. Every record must have `product(dims)` elements.
pub fn encode<'a>(dims: &[usize], records: impl IntoIterator<Item = &'a [f32]>) -> Result<Vec<u8>> {
    let per: usize = dims.iter().product();
    let mut out = Vec::with_capacity(header_len(dims.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| TecoError::Data(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for r in records {
        if r.len() != per {
            return Err(TecoError::shape("blob record", &[r.len()], &[per]));
        }
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decoded blob contents.
#[derive(Debug)]
pub struct Blob {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Blob {
    pub fn record_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn record_count(&self) -> usize {
        self.values.len() / self.record_len().max(1)
    }

    pub fn record(&self, slot: usize) -> Option<&[f32]> {
        let n = self.record_len();
        self.values.get(slot * n..(slot + 1) * n)
    }
}

pub fn decode(bytes: &[u8], what: &str) -> Result<Blob> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(TecoError::Data(format!("{what}: bad magic")));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TecoError::Data(format!(
            "{what}: unknown blob version {version}"
        )));
    }
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let hl = header_len(rank);
    if bytes.len() < hl {
        return Err(TecoError::Data(format!("{what}: truncated header")));
    }
    let dims: Vec<usize> = bytes[8..hl]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let per: usize = dims.iter().product();
    let body = &bytes[hl..];
    if !body.len().is_multiple_of(4) || per == 0 || !(body.len() / 4).is_multiple_of(per) {
        return Err(TecoError::Data(format!(
            "{what}: body of {} bytes is not a whole number of {dims:?} records",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Blob { dims, values })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            TecoError::Data(format!("missing file: {}", path.display()))
        } else {
            TecoError::io(path, e)
        }
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| TecoError::io(path, e))
}
