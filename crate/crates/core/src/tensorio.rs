//! Framed binary container for named f64 tensors.
//!
//! Layout: the 8-byte magic `LCTENSR1`, a little-endian u32 header length,
//! a JSON header listing tensor names and dims plus free-form metadata,
//! then the payloads concatenated in header order as little-endian f64 in
//! row-major order. Everything about the encoding is fixed, so the same
//! tensors always produce the same bytes.

use std::io::Read;
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::atomic_write;

pub const MAGIC: &[u8; 8] = b"LCTENSR1";

/// Refuse absurd headers instead of allocating for them.
const MAX_HEADER_LEN: u32 = 1 << 24;

#[derive(Debug, Serialize, Deserialize)]
struct TensorDesc {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorDesc>,
    meta: serde_json::Value,
}

/// Write named tensors and metadata to `path` atomically.
pub fn write_tensors(
    path: &Path,
    tensors: &[(&str, ArrayViewD<'_, f64>)],
    meta: &serde_json::Value,
) -> Result<()> {
    let header = Header {
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorDesc {
                name: (*name).to_string(),
                dims: t.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header_bytes.len())
        .map_err(|_| Error::data("tensor header too large"))?;

    let payload_len: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in tensors {
        let standard = t.as_standard_layout();
        for v in standard.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

/// Read a tensor file back: named tensors in stored order plus metadata.
pub fn read_tensors(path: &Path) -> Result<(Vec<(String, ArrayD<f64>)>, serde_json::Value)> {
    let name = path.display().to_string();
    let mut file = std::fs::File::open(path)?;

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::parse(&name, 1, "file too short for magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse(&name, 1, "not a tensor file (bad magic)"));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::parse(&name, 1, "file too short for header length"))?;
    let header_len = u32::from_le_bytes(len_bytes);
    if header_len > MAX_HEADER_LEN {
        return Err(Error::parse(&name, 1, "tensor header too large"));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::parse(&name, 1, "file too short for header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(&name, 1, format!("bad tensor header: {e}")))?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for desc in header.tensors {
        let count: usize = desc.dims.iter().product();
        let mut raw = vec![0u8; count * 8];
        file.read_exact(&mut raw).map_err(|_| {
            Error::parse(&name, 1, format!("payload truncated in `{}`", desc.name))
        })?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = ArrayD::from_shape_vec(desc.dims.clone(), values).map_err(|_| {
            Error::parse(&name, 1, format!("inconsistent dims for `{}`", desc.name))
        })?;
        tensors.push((desc.name, array));
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::parse(&name, 1, "trailing bytes after payload"));
    }
    Ok((tensors, header.meta))
}
