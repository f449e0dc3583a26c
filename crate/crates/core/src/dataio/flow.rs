//! Dense displacement fields and the synthetic flow corruption model.

use super::DataError;
use crate::numerics::{Matrix, RngStream};

/// Per-pixel displacement field; `(u, v)` interleaved, row-major.
/// `u` is the displacement along x, `v` along y, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![0.0; width * height * 2],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.vectors[i], self.vectors[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, u: f32, v: f32) {
        let i = (y * self.width + x) * 2;
        self.vectors[i] = u;
        self.vectors[i + 1] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> FlowField {
        assert!(x0 + size <= self.width && y0 + size <= self.height);
        let mut out = FlowField::zeros(size, size);
        for y in 0..size {
            let src = ((y0 + y) * self.width + x0) * 2;
            let dst = y * size * 2;
            out.vectors[dst..dst + size * 2].copy_from_slice(&self.vectors[src..src + size * 2]);
        }
        out
    }

    pub fn max_magnitude(&self) -> f32 {
        let mut m = 0.0f32;
        for px in self.vectors.chunks_exact(2) {
            m = m.max((px[0] * px[0] + px[1] * px[1]).sqrt());
        }
        m
    }

    /// N×2 matrix over pixels, row-major.
    pub fn as_matrix(&self) -> Matrix {
        Matrix::from_vec(self.width * self.height, 2, self.vectors.clone())
    }

    pub fn from_matrix(width: usize, height: usize, m: &Matrix) -> FlowField {
        assert_eq!(m.rows(), width * height);
        assert_eq!(m.cols(), 2);
        FlowField {
            width,
            height,
            vectors: m.data().to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }
}

/// Synthetic stand-in for flow-network error: dense Gaussian noise plus
/// coherent outlier patches.
#[derive(Debug, Clone, Copy)]
pub struct CorruptionConfig {
    pub gaussian_sigma: f32,
    pub outlier_fraction: f32,
    pub outlier_patch: usize,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn new(
        gaussian_sigma: f32,
        outlier_fraction: f32,
        outlier_patch: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if !(0.0..=0.5).contains(&outlier_fraction) {
            return Err(DataError::InvalidConfig(format!(
                "outlier_fraction {outlier_fraction} outside [0, 0.5]"
            )));
        }
        if gaussian_sigma < 0.0 {
            return Err(DataError::InvalidConfig("negative gaussian_sigma".into()));
        }
        if outlier_fraction > 0.0 && outlier_patch == 0 {
            return Err(DataError::InvalidConfig("zero outlier patch size".into()));
        }
        Ok(CorruptionConfig {
            gaussian_sigma,
            outlier_fraction,
            outlier_patch,
            seed,
        })
    }
}

/// Corrupt a flow field: i.i.d. Gaussian noise everywhere, then
/// `floor(fraction·area / patch²)` square patches overwritten with one
/// uniform random vector each, magnitude bounded by the input's maximum.
pub fn corrupt_flow(flow: &FlowField, cfg: &CorruptionConfig) -> FlowField {
    let mut out = flow.clone();
    let max_mag = flow.max_magnitude();
    let mut rng = RngStream::new(cfg.seed).child("corrupt", 0);
    if cfg.gaussian_sigma > 0.0 {
        for v in out.vectors.iter_mut() {
            *v += cfg.gaussian_sigma * rng.next_gaussian();
        }
    }
    if cfg.outlier_fraction > 0.0 {
        let area = (flow.width * flow.height) as f64;
        let per_patch = (cfg.outlier_patch * cfg.outlier_patch) as f64;
        let n_patches = (cfg.outlier_fraction as f64 * area / per_patch).floor() as usize;
        let ps = cfg.outlier_patch.min(flow.width).min(flow.height);
        for _ in 0..n_patches {
            let x0 = rng.next_index(flow.width - ps + 1);
            let y0 = rng.next_index(flow.height - ps + 1);
            let angle = rng.next_range(0.0, std::f32::consts::TAU);
            let mag = rng.next_range(0.0, max_mag);
            let (u, v) = (mag * angle.cos(), mag * angle.sin());
            for y in y0..y0 + ps {
                for x in x0..x0 + ps {
                    out.set(y, x, u, v);
                }
            }
        }
    }
    out
}
