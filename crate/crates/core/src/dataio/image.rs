//! In-memory frame and mask grids plus binary PPM/PGM readers and writers.

use super::DataError;
use std::fs;
use std::io::Write;
use std::path::Path;

/// RGB frame with channels in [0, 1], row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageF32 {
    pub fn zeros(height: usize, width: usize) -> Self {
        ImageF32 {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> ImageF32 {
        assert!(x0 + size <= self.width && y0 + size <= self.height);
        let mut out = ImageF32::zeros(size, size);
        for y in 0..size {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * size * 3;
            out.data[dst..dst + size * 3].copy_from_slice(&self.data[src..src + size * 3]);
        }
        out
    }
}

/// Grid of instance / class ids; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u8>,
}

impl LabelGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        LabelGrid {
            height,
            width,
            ids: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.ids[y * self.width + x] = v;
    }

    pub fn max_id(&self) -> u8 {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(path, e))
}

/// Binary PPM (P6, maxval 255) from raw 8-bit RGB.
pub fn write_ppm_bytes(
    path: &Path,
    width: usize,
    height: usize,
    rgb: &[u8],
) -> Result<(), DataError> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(rgb);
    write_bytes(path, &out)
}

/// Quantize a float frame to 8 bits and write it as binary PPM.
pub fn write_ppm_f32(path: &Path, img: &ImageF32) -> Result<(), DataError> {
    let rgb: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_ppm_bytes(path, img.width, img.height, &rgb)
}

/// Binary PGM (P5, maxval 255); mask ids are stored verbatim.
pub fn write_pgm(path: &Path, grid: &LabelGrid) -> Result<(), DataError> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend_from_slice(&grid.ids);
    write_bytes(path, &out)
}

struct NetpbmHeader {
    width: usize,
    height: usize,
    data_start: usize,
}

/// Parse a `P6`/`P5` header: magic, whitespace/comments, width, height,
/// maxval, one whitespace byte, then raw payload.
fn parse_netpbm(path: &Path, bytes: &[u8], magic: &[u8]) -> Result<NetpbmHeader, DataError> {
    if bytes.len() < 2 || &bytes[0..2] != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            detail: format!("expected {}", String::from_utf8_lossy(magic)),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(DataError::InvalidHeader {
                path: path.to_path_buf(),
                reason: "missing numeric header field".into(),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| DataError::InvalidHeader {
                path: path.to_path_buf(),
                reason: "unparsable header field".into(),
            })?;
    }
    if fields[2] != 255 {
        return Err(DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported maxval {}", fields[2]),
        });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: "missing separator after maxval".into(),
        });
    }
    Ok(NetpbmHeader {
        width: fields[0],
        height: fields[1],
        data_start: pos + 1,
    })
}

pub fn read_ppm(path: &Path) -> Result<ImageF32, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let h = parse_netpbm(path, &bytes, b"P6")?;
    let needed = h.width * h.height * 3;
    let payload = &bytes[h.data_start.min(bytes.len())..];
    if payload.len() < needed {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: (h.data_start + needed) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(ImageF32 {
        height: h.height,
        width: h.width,
        data: payload[..needed].iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

pub fn read_pgm(path: &Path) -> Result<LabelGrid, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let h = parse_netpbm(path, &bytes, b"P5")?;
    let needed = h.width * h.height;
    let payload = &bytes[h.data_start.min(bytes.len())..];
    if payload.len() < needed {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            expected: (h.data_start + needed) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(LabelGrid {
        height: h.height,
        width: h.width,
        ids: payload[..needed].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_smallest_case() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.ppm");
        let img = ImageF32::zeros(1, 1);
        write_ppm_f32(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P6\n1 1\n255\n");
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 0, 0]);
    }

    #[test]
    fn ppm_quantized_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = ImageF32::zeros(4, 7);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 13) % 256) as f32 / 255.0;
        }
        write_ppm_f32(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img); // values are exact multiples of 1/255
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let mut grid = LabelGrid::zeros(3, 5);
        for (i, v) in grid.ids.iter_mut().enumerate() {
            *v = (i % 4) as u8;
        }
        write_pgm(&path, &grid).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), grid);
    }

    #[test]
    fn malformed_header_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\nxx yy\n255\n").unwrap();
        assert!(matches!(
            read_ppm(&path),
            Err(DataError::InvalidHeader { .. })
        ));
        std::fs::write(&path, b"Q6\n1 1\n255\n\0\0\0").unwrap();
        assert!(matches!(read_ppm(&path), Err(DataError::BadMagic { .. })));
        std::fs::write(&path, b"P6\n2 2\n255\n\0\0\0").unwrap();
        assert!(matches!(
            read_ppm(&path),
            Err(DataError::TruncatedFile { .. })
        ));
    }
}
