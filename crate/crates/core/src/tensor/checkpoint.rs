//! Binary checkpoint layout for named tensors.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"DGLCCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H in bytes, u64 little-endian
//! 20      H     UTF-8 JSON header:
//!               {"tensors":[{"name":..,"shape":[..],"offset":..,"len":..}, ...]}
//!               offset = byte offset of the tensor inside the data section,
//!               len    = number of elements
//! 20+H    ...   data section: every element as f64 little-endian, tensors
//!               back to back in header order
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Tensor;

pub const MAGIC: &[u8; 8] = b"DGLCCKPT";
pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
}

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len() * 8;
    }
    let header = serde_json::to_vec(&Header { tensors: entries }).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    if bytes.len() < PREFIX_LEN {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        return Err(CheckpointError::Truncated {
            needed: PREFIX_LEN,
            have: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = PREFIX_LEN
        .checked_add(header_len)
        .ok_or_else(|| CheckpointError::Header("header length overflows".into()))?;
    if bytes.len() < data_start {
        return Err(CheckpointError::Truncated {
            needed: data_start,
            have: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..data_start])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let data = &bytes[data_start..];

    let mut expected_offset = 0;
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(CheckpointError::Header(format!(
                "tensor {}: shape {:?} does not hold {} elements",
                e.name, e.shape, e.len
            )));
        }
        if e.offset != expected_offset {
            return Err(CheckpointError::Header(format!(
                "tensor {}: offset {} should be {}",
                e.name, e.offset, expected_offset
            )));
        }
        let end = e.offset + e.len * 8;
        if data.len() < end {
            return Err(CheckpointError::Truncated {
                needed: data_start + end,
                have: bytes.len(),
            });
        }
        let values = data[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t =
            Tensor::new(e.shape, values).map_err(|err| CheckpointError::Header(err.to_string()))?;
        out.push((e.name, t));
        expected_offset = end;
    }
    if data.len() != expected_offset {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after the last tensor",
            data.len() - expected_offset
        )));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(tensors))?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
