//! Middlebury `.flo` reader and writer.
//!
//! Layout: the 4-byte little-endian float 202021.25 (bytes "PIEH"), i32
//! width, i32 height, then row-major interleaved (u, v) f32 pairs, all
//! little-endian.

use super::{DataError, FlowField};
use std::fs;
use std::io::Write;
use std::path::Path;

const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(12 + flow.vectors.len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for v in &flow.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&out).map_err(|e| DataError::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 12 {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            detail: format!("flo magic {magic} != {FLO_MAGIC}"),
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width < 0 || height < 0 {
        return Err(DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("negative dimensions {width}x{height}"),
        });
    }
    let (width, height) = (width as usize, height as usize);
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: u64::MAX,
            found: bytes.len() as u64,
        })?;
    if bytes.len() < 12 + needed {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: (12 + needed) as u64,
            found: bytes.len() as u64,
        });
    }
    let vectors = bytes[12..12 + needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FlowField {
        width,
        height,
        vectors,
    })
}
