//! Frozen low-resolution feature extractor.
//!
//! A deterministic stand-in for a pre-trained backbone: each non-overlapping
//! p×p patch is flattened, projected through a fixed random matrix with
//! orthonormal columns, and squashed with tanh. The projection is built once
//! from a seed and never updated.

use crate::dataio::{read_fltf, DataError, ImageF32};
use crate::numerics::{Matrix, RngStream};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("frame {h}x{w} not divisible by patch {patch}")]
    IndivisibleDims { h: usize, w: usize, patch: usize },
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("non-finite data in {0}")]
    NonFiniteData(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Dense feature tensor; row-major pixels, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureGrid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// View as an N×C matrix over pixels.
    pub fn as_matrix(&self) -> Matrix {
        Matrix::from_vec(self.height * self.width, self.channels, self.data.clone())
    }

    pub fn from_matrix(height: usize, width: usize, m: &Matrix) -> FeatureGrid {
        assert_eq!(m.rows(), height * width);
        FeatureGrid {
            height,
            width,
            channels: m.cols(),
            data: m.data().to_vec(),
        }
    }

    /// Concatenate channels of two grids with identical spatial dims.
    pub fn concat_channels(&self, other: &FeatureGrid) -> FeatureGrid {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let channels = self.channels + other.channels;
        let mut out = FeatureGrid::zeros(self.height, self.width, channels);
        for p in 0..self.height * self.width {
            let dst = p * channels;
            out.data[dst..dst + self.channels]
                .copy_from_slice(&self.data[p * self.channels..(p + 1) * self.channels]);
            out.data[dst + self.channels..dst + channels]
                .copy_from_slice(&other.data[p * other.channels..(p + 1) * other.channels]);
        }
        out
    }

    /// Block-average downsample by an integer factor.
    pub fn avg_pool(&self, factor: usize) -> FeatureGrid {
        assert!(factor >= 1 && self.height % factor == 0 && self.width % factor == 0);
        let (oh, ow) = (self.height / factor, self.width / factor);
        let mut out = FeatureGrid::zeros(oh, ow, self.channels);
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..self.channels {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.at(y * factor + dy, x * factor + dx, c) as f64;
                        }
                    }
                    out.set(y, x, c, (acc * norm) as f32);
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fixed patch-projection encoder.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    patch: usize,
    dim: usize,
    /// (3·p²) × dim, orthonormal columns.
    projection: Matrix,
    seed: u64,
}

impl FrozenEncoder {
    pub fn new(seed: u64, patch: usize, dim: usize) -> FrozenEncoder {
        let rows = 3 * patch * patch;
        assert!(
            dim <= rows,
            "encoder dim {dim} exceeds patch dimensionality {rows}"
        );
        let mut rng = RngStream::new(seed).child("encoder-projection", 0);
        // gaussian columns, orthonormalized by modified Gram-Schmidt in f64
        let mut cols: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..rows).map(|_| rng.next_gaussian() as f64).collect())
            .collect();
        for i in 0..dim {
            for j in 0..i {
                let dot: f64 = (0..rows).map(|r| cols[i][r] * cols[j][r]).sum();
                for r in 0..rows {
                    cols[i][r] -= dot * cols[j][r];
                }
            }
            let norm: f64 = (0..rows).map(|r| cols[i][r] * cols[i][r]).sum::<f64>().sqrt();
            for r in 0..rows {
                cols[i][r] /= norm;
            }
        }
        let projection = Matrix::from_fn(rows, dim, |r, c| cols[c][r] as f32);
        FrozenEncoder {
            patch,
            dim,
            projection,
            seed,
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// Encode a frame into a (H/p)×(W/p)×dim grid.
    pub fn encode(&self, frame: &ImageF32) -> Result<FeatureGrid, EncoderError> {
        let p = self.patch;
        if frame.height % p != 0 || frame.width % p != 0 {
            return Err(EncoderError::IndivisibleDims {
                h: frame.height,
                w: frame.width,
                patch: p,
            });
        }
        let (gh, gw) = (frame.height / p, frame.width / p);
        let mut out = FeatureGrid::zeros(gh, gw, self.dim);
        let mut patch_buf = vec![0.0f32; 3 * p * p];
        for gy in 0..gh {
            for gx in 0..gw {
                let mut i = 0;
                for py in 0..p {
                    for px in 0..p {
                        for c in 0..3 {
                            patch_buf[i] = frame.get(gy * p + py, gx * p + px, c);
                            i += 1;
                        }
                    }
                }
                for ch in 0..self.dim {
                    let mut acc = 0.0f64;
                    for (r, &v) in patch_buf.iter().enumerate() {
                        acc += v as f64 * self.projection.get(r, ch) as f64;
                    }
                    out.set(gy, gx, ch, (acc as f32).tanh());
                }
            }
        }
        Ok(out)
    }
}

/// Bilinear upsampling, align-corners-false: source = (i + 0.5)·scale − 0.5.
pub fn bilinear_upsample(
    grid: &FeatureGrid,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureGrid, EncoderError> {
    if out_h < grid.height || out_w < grid.width || out_h == 0 || out_w == 0 {
        return Err(EncoderError::InvalidDims(format!(
            "cannot upsample {}x{} to {}x{}",
            grid.height, grid.width, out_h, out_w
        )));
    }
    let mut out = FeatureGrid::zeros(out_h, out_w, grid.channels);
    let scale_y = grid.height as f32 / out_h as f32;
    let scale_x = grid.width as f32 / out_w as f32;
    for oy in 0..out_h {
        let sy = ((oy as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (grid.height - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(grid.height - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_w {
            let sx = ((ox as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (grid.width - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(grid.width - 1);
            let fx = sx - x0 as f32;
            for c in 0..grid.channels {
                let v00 = grid.at(y0, x0, c);
                let v01 = grid.at(y0, x1, c);
                let v10 = grid.at(y1, x0, c);
                let v11 = grid.at(y1, x1, c);
                let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                    + fy * ((1.0 - fx) * v10 + fx * v11);
                out.set(oy, ox, c, v);
            }
        }
    }
    Ok(out)
}

/// Load an externally computed feature grid from an FLTF file (H, W, C).
pub fn load_external_features(path: &Path) -> Result<FeatureGrid, EncoderError> {
    let (dims, data) = read_fltf(path)?;
    if dims.len() != 3 {
        return Err(EncoderError::InvalidDims(format!(
            "expected 3 dims in {}, got {}",
            path.display(),
            dims.len()
        )));
    }
    let grid = FeatureGrid {
        height: dims[0] as usize,
        width: dims[1] as usize,
        channels: dims[2] as usize,
        data,
    };
    if !grid.is_finite() {
        return Err(EncoderError::NonFiniteData(path.display().to_string()));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::write_fltf;

    fn random_frame(h: usize, w: usize, seed: u64) -> ImageF32 {
        let mut rng = RngStream::new(seed);
        let mut f = ImageF32::zeros(h, w);
        for v in f.data.iter_mut() {
            *v = rng.next_uniform();
        }
        f
    }

    #[test]
    fn zero_frame_encodes_to_zero() {
        let enc = FrozenEncoder::new(5, 8, 16);
        let out = enc.encode(&ImageF32::zeros(16, 16)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn locality_one_patch_changes_one_cell() {
        let enc = FrozenEncoder::new(5, 8, 16);
        let a = random_frame(16, 24, 1);
        let mut b = a.clone();
        b.set(10, 3, 1, b.get(10, 3, 1) + 0.25); // patch (1, 0)
        let fa = enc.encode(&a).unwrap();
        let fb = enc.encode(&b).unwrap();
        for gy in 0..2 {
            for gx in 0..3 {
                let same = (0..16).all(|c| fa.at(gy, gx, c) == fb.at(gy, gx, c));
                assert_eq!(same, !(gy == 1 && gx == 0), "cell ({gy},{gx})");
            }
        }
    }

    #[test]
    fn matches_naive_projection_oracle() {
        let enc = FrozenEncoder::new(5, 8, 32);
        let frame = random_frame(16, 16, 99);
        let out = enc.encode(&frame).unwrap();
        for gy in 0..2 {
            for gx in 0..2 {
                for ch in 0..32 {
                    let mut acc = 0.0f64;
                    let mut r = 0;
                    for py in 0..8 {
                        for px in 0..8 {
                            for c in 0..3 {
                                acc += frame.get(gy * 8 + py, gx * 8 + px, c) as f64
                                    * enc.projection().get(r, ch) as f64;
                                r += 1;
                            }
                        }
                    }
                    let expect = (acc as f32).tanh();
                    assert!((out.at(gy, gx, ch) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let enc = FrozenEncoder::new(5, 8, 16);
        assert!(matches!(
            enc.encode(&ImageF32::zeros(17, 16)),
            Err(EncoderError::IndivisibleDims { .. })
        ));
    }

    #[test]
    fn projection_columns_orthonormal() {
        let enc = FrozenEncoder::new(11, 8, 64);
        let p = enc.projection();
        for c1 in 0..64 {
            for c2 in c1..64 {
                let dot: f64 = (0..p.rows())
                    .map(|r| p.get(r, c1) as f64 * p.get(r, c2) as f64)
                    .sum();
                let expect = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-5, "col {c1}·col {c2} = {dot}");
            }
        }
    }

    #[test]
    fn per_patch_perturbation_bounded() {
        // orthonormal columns have operator norm 1 and tanh is 1-Lipschitz,
        // so |Δout| ≤ ‖Δpatch‖₂ ≤ √(3p²)·|Δin|∞
        let enc = FrozenEncoder::new(7, 8, 32);
        let a = random_frame(8, 8, 2);
        let mut rng = RngStream::new(3);
        let mut b = a.clone();
        let eps = 0.01f32;
        for v in b.data.iter_mut() {
            *v += eps * (rng.next_uniform() * 2.0 - 1.0);
        }
        let fa = enc.encode(&a).unwrap();
        let fb = enc.encode(&b).unwrap();
        let bound = eps * (3.0f32 * 64.0).sqrt() + 1e-5;
        for (x, y) in fa.data.iter().zip(fb.data.iter()) {
            assert!((x - y).abs() <= bound);
        }
    }

    #[test]
    fn upsample_identity_and_constant() {
        let enc = FrozenEncoder::new(5, 8, 4);
        let f = enc.encode(&random_frame(16, 16, 5)).unwrap();
        let same = bilinear_upsample(&f, 2, 2).unwrap();
        assert_eq!(same, f);
        let mut c = FeatureGrid::zeros(3, 3, 2);
        for v in c.data.iter_mut() {
            *v = 0.7;
        }
        let up = bilinear_upsample(&c, 9, 12).unwrap();
        assert!(up.data.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn upsample_matches_hand_computed_values() {
        // 2x2 [[0,1],[2,3]] → 4x4; f(y, x) = 2·sy + sx is bilinear-exact,
        // with source coords {0, 0.25, 0.75, 1} after clamping
        let g = FeatureGrid {
            height: 2,
            width: 2,
            channels: 1,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        let up = bilinear_upsample(&g, 4, 4).unwrap();
        let coords = [0.0f32, 0.25, 0.75, 1.0];
        for (y, &sy) in coords.iter().enumerate() {
            for (x, &sx) in coords.iter().enumerate() {
                let expect = 2.0 * sy + sx;
                assert!(
                    (up.at(y, x, 0) - expect).abs() < 1e-6,
                    "({y},{x}): {} vs {expect}",
                    up.at(y, x, 0)
                );
            }
        }
    }

    #[test]
    fn upsample_rejects_downscale() {
        let g = FeatureGrid::zeros(4, 4, 1);
        assert!(matches!(
            bilinear_upsample(&g, 2, 4),
            Err(EncoderError::InvalidDims(_))
        ));
    }

    #[test]
    fn external_features_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.fltf");
        let grid = FeatureGrid {
            height: 4,
            width: 5,
            channels: 2,
            data: (0..40).map(|i| i as f32 * 0.1).collect(),
        };
        write_fltf(&path, &[4, 5, 2], &grid.data).unwrap();
        assert_eq!(load_external_features(&path).unwrap(), grid);

        let zeros = vec![0.0f32; 8];
        write_fltf(&path, &[2, 2, 2], &zeros).unwrap();
        assert!(load_external_features(&path).unwrap().data.iter().all(|&v| v == 0.0));

        let mut bad = grid.data.clone();
        bad[3] = f32::NAN;
        write_fltf(&path, &[4, 5, 2], &bad).unwrap();
        assert!(matches!(
            load_external_features(&path),
            Err(EncoderError::NonFiniteData(_))
        ));

        std::fs::write(&path, b"FLTF\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_external_features(&path),
            Err(EncoderError::Data(DataError::TruncatedFile { .. }))
        ));
    }

    #[test]
    fn encoder_is_deterministic_per_seed() {
        let a = FrozenEncoder::new(42, 8, 16);
        let b = FrozenEncoder::new(42, 8, 16);
        assert_eq!(a.projection(), b.projection());
        let c = FrozenEncoder::new(43, 8, 16);
        assert_ne!(a.projection(), c.projection());
    }
}
