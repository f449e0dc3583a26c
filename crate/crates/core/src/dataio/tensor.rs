//! `FLTF` float-tensor container.
//!
//! Layout: magic "FLTF", u32 version (= 1), u32 ndim, ndim u32 dims, then
//! row-major f32 payload, all little-endian. Used for feature ingestion and
//! checkpoint tensors.

use super::DataError;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FLTF";
const VERSION: u32 = 1;

pub fn write_fltf(path: &Path, dims: &[u32], data: &[f32]) -> Result<(), DataError> {
    let count: u64 = dims.iter().map(|&d| d as u64).product();
    assert_eq!(count as usize, data.len(), "fltf dims/payload mismatch");
    let mut out = Vec::with_capacity(12 + dims.len() * 4 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&out).map_err(|e| DataError::io(path, e))
}

pub fn read_fltf(path: &Path) -> Result<(Vec<u32>, Vec<f32>), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            detail: "expected FLTF".into(),
        });
    }
    if bytes.len() < 12 {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DataError::VersionUnsupported {
            path: path.to_path_buf(),
            version,
        });
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_len = 12 + ndim * 4;
    if bytes.len() < header_len {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: header_len as u64,
            found: bytes.len() as u64,
        });
    }
    let dims: Vec<u32> = (0..ndim)
        .map(|i| u32::from_le_bytes(bytes[12 + i * 4..16 + i * 4].try_into().unwrap()))
        .collect();
    // declared payload may overflow; surface that as truncation
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: u64::MAX,
            found: bytes.len() as u64,
        })?;
    let available = (bytes.len() - header_len) as u64;
    if available < count {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: header_len as u64 + count,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[header_len..header_len + count as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}
