//! Trainable decoder head: upsampled encoder features concatenated with raw
//! pixels, two 3×3 convolutions with a ReLU in between. Gradients are
//! hand-derived for this fixed architecture; the EMA teacher is a shadow copy
//! updated outside the gradient path.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{adam_update_slice, adamw_step, AdamConfig, OptimizerState};

use crate::dataio::ImageF32;
use crate::encoder::{bilinear_upsample, FeatureGrid};
use crate::numerics::{Matrix, RngStream};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// One 3×3 convolution, stride 1, zero padding.
///
/// Weights are stored as a (9·in_ch)×out_ch matrix whose row index is
/// `(ky·3 + kx)·in_ch + ic`, matching the im2col layout below.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            weights: vec![0.0; 9 * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    /// Kaiming fan-in init: weights ~ N(0, 2/fan_in), zero biases.
    pub fn kaiming(in_ch: usize, out_ch: usize, rng: &mut RngStream) -> Self {
        let std = (2.0 / (9 * in_ch) as f32).sqrt();
        let weights = (0..9 * in_ch * out_ch)
            .map(|_| std * rng.next_gaussian())
            .collect();
        ConvLayer {
            in_ch,
            out_ch,
            weights,
            bias: vec![0.0; out_ch],
        }
    }

    fn weight_matrix(&self) -> Matrix {
        Matrix::from_vec(9 * self.in_ch, self.out_ch, self.weights.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub enc_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            enc_dim: 64,
            hidden: 64,
            feature_dim: 128,
        }
    }
}

/// Student parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl DecoderParams {
    pub fn config(&self) -> DecoderConfig {
        DecoderConfig {
            enc_dim: self.conv1.in_ch - 3,
            hidden: self.conv1.out_ch,
            feature_dim: self.conv2.out_ch,
        }
    }

    pub fn same_shape(&self, other: &DecoderParams) -> bool {
        self.conv1.in_ch == other.conv1.in_ch
            && self.conv1.out_ch == other.conv1.out_ch
            && self.conv2.in_ch == other.conv2.in_ch
            && self.conv2.out_ch == other.conv2.out_ch
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
        ]
    }
}

/// Deterministic decoder init from a seed.
pub fn init_params(cfg: &DecoderConfig, seed: u64) -> DecoderParams {
    let root = RngStream::new(seed);
    DecoderParams {
        conv1: ConvLayer::kaiming(cfg.enc_dim + 3, cfg.hidden, &mut root.child("conv1", 0)),
        conv2: ConvLayer::kaiming(cfg.hidden, cfg.feature_dim, &mut root.child("conv2", 0)),
    }
}

/// EMA copy of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaParams {
    pub params: DecoderParams,
    pub momentum: f32,
}

impl EmaParams {
    pub fn from_student(student: &DecoderParams, momentum: f32) -> Self {
        EmaParams {
            params: student.clone(),
            momentum,
        }
    }
}

/// `teacher ← m·teacher + (1−m)·student`, computed as
/// `teacher + (1−m)·(student − teacher)` so an equal pair is an exact fixed
/// point.
pub fn ema_update(teacher: &mut EmaParams, student: &DecoderParams) -> Result<(), DecoderError> {
    if !teacher.params.same_shape(student) {
        return Err(DecoderError::ShapeMismatch(
            "ema_update: teacher/student shapes differ".into(),
        ));
    }
    let one_minus_m = 1.0 - teacher.momentum;
    let student_tensors = student.tensors();
    for (t, s) in teacher
        .params
        .tensors_mut()
        .into_iter()
        .zip(student_tensors)
    {
        for (tv, &sv) in t.iter_mut().zip(s.iter()) {
            *tv += one_minus_m * (sv - *tv);
        }
    }
    Ok(())
}

/// Gradients (same shapes as the parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub conv1_w: Vec<f32>,
    pub conv1_b: Vec<f32>,
    pub conv2_w: Vec<f32>,
    pub conv2_b: Vec<f32>,
}

impl DecoderGrads {
    pub fn zeros_like(params: &DecoderParams) -> Self {
        DecoderGrads {
            conv1_w: vec![0.0; params.conv1.weights.len()],
            conv1_b: vec![0.0; params.conv1.bias.len()],
            conv2_w: vec![0.0; params.conv2.weights.len()],
            conv2_b: vec![0.0; params.conv2.bias.len()],
        }
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
        ]
    }

    pub fn add_assign(&mut self, other: &DecoderGrads) {
        let other_tensors = other.tensors();
        for (a, b) in self.tensors_mut().into_iter().zip(other_tensors) {
            for (x, &y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f32, |m, &v| m.max(v.abs()))
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations kept for the backward pass: the concatenated decoder input
/// and the conv1 pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: FeatureGrid,
    pub pre1: FeatureGrid,
}

/// 3×3 im2col: row per pixel, column index `(ky·3 + kx)·C + c`.
fn im2col3(grid: &FeatureGrid) -> Matrix {
    let (h, w, ch) = (grid.height, grid.width, grid.channels);
    let k = 9 * ch;
    let mut out = vec![0.0f32; h * w * k];
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * k;
            for ky in 0..3usize {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3usize {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = row + (ky * 3 + kx) * ch;
                    let src = ((sy as usize) * w + sx as usize) * ch;
                    out[dst..dst + ch].copy_from_slice(&grid.data[src..src + ch]);
                }
            }
        }
    }
    Matrix::from_vec(h * w, k, out)
}

/// Adjoint of `im2col3`: scatter-add column gradients back onto the grid.
fn col2im3(dcol: &Matrix, h: usize, w: usize, ch: usize) -> FeatureGrid {
    let mut out = FeatureGrid::zeros(h, w, ch);
    let k = 9 * ch;
    assert_eq!(dcol.cols(), k);
    for y in 0..h {
        for x in 0..w {
            let row = dcol.row(y * w + x);
            for ky in 0..3usize {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3usize {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (ky * 3 + kx) * ch;
                    let dst = ((sy as usize) * w + sx as usize) * ch;
                    for c in 0..ch {
                        out.data[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}

fn conv_forward(layer: &ConvLayer, input: &FeatureGrid) -> FeatureGrid {
    let col = im2col3(input);
    let mut out = col.matmul(&layer.weight_matrix());
    let oc = layer.out_ch;
    for r in 0..out.rows() {
        let row = &mut out.data_mut()[r * oc..(r + 1) * oc];
        for (v, &b) in row.iter_mut().zip(layer.bias.iter()) {
            *v += b;
        }
    }
    FeatureGrid::from_matrix(input.height, input.width, &out)
}

/// Decoder forward: upsample encoder features to the crop resolution,
/// concatenate raw pixels, conv → ReLU → conv.
pub fn decoder_forward(
    params: &DecoderParams,
    enc_features: &FeatureGrid,
    frame_crop: &ImageF32,
) -> Result<(FeatureGrid, ForwardCache), DecoderError> {
    let (h, w) = (frame_crop.height, frame_crop.width);
    if h % enc_features.height != 0 || w % enc_features.width != 0 {
        return Err(DecoderError::ShapeMismatch(format!(
            "encoder grid {}x{} does not divide crop {}x{}",
            enc_features.height, enc_features.width, h, w
        )));
    }
    if params.conv1.in_ch != enc_features.channels + 3 {
        return Err(DecoderError::ShapeMismatch(format!(
            "conv1 expects {} input channels, encoder gives {}+3",
            params.conv1.in_ch, enc_features.channels
        )));
    }
    if params.conv2.in_ch != params.conv1.out_ch {
        return Err(DecoderError::ShapeMismatch(
            "conv2 input does not match conv1 output".into(),
        ));
    }
    let up = bilinear_upsample(enc_features, h, w)
        .map_err(|e| DecoderError::ShapeMismatch(e.to_string()))?;
    let crop_grid = FeatureGrid {
        height: h,
        width: w,
        channels: 3,
        data: frame_crop.data.clone(),
    };
    let input = up.concat_channels(&crop_grid);
    let pre1 = conv_forward(&params.conv1, &input);
    let mut hidden = pre1.clone();
    for v in hidden.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let out = conv_forward(&params.conv2, &hidden);
    Ok((out, ForwardCache { input, pre1 }))
}

/// Exact gradients of the forward map. ReLU subgradient at 0 is 0.
pub fn decoder_backward(
    params: &DecoderParams,
    cache: &ForwardCache,
    grad_out: &FeatureGrid,
) -> Result<DecoderGrads, DecoderError> {
    let (h, w) = (cache.input.height, cache.input.width);
    if grad_out.height != h || grad_out.width != w || grad_out.channels != params.conv2.out_ch {
        return Err(DecoderError::ShapeMismatch(format!(
            "grad_out {}x{}x{} does not match forward output {}x{}x{}",
            grad_out.height, grad_out.width, grad_out.channels, h, w, params.conv2.out_ch
        )));
    }
    if cache.pre1.channels != params.conv1.out_ch {
        return Err(DecoderError::ShapeMismatch(
            "cache does not match parameters".into(),
        ));
    }
    let n = h * w;
    let gout = grad_out.as_matrix();

    // conv2 weight/bias grads against relu(pre1)
    let mut hidden = cache.pre1.clone();
    for v in hidden.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let col2 = im2col3(&hidden);
    let dw2 = mul_tn(&col2, &gout);
    let db2 = column_sums(&gout);

    // gradient into the hidden activation, masked by the ReLU
    let w2t = params.conv2.weight_matrix().transpose();
    let dcol2 = gout.matmul(&w2t);
    let mut dhidden = col2im3(&dcol2, h, w, params.conv2.in_ch);
    for (g, &p) in dhidden.data.iter_mut().zip(cache.pre1.data.iter()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }

    let col1 = im2col3(&cache.input);
    let dpre1 = Matrix::from_vec(n, params.conv1.out_ch, dhidden.data);
    let dw1 = mul_tn(&col1, &dpre1);
    let db1 = column_sums(&dpre1);

    Ok(DecoderGrads {
        conv1_w: dw1,
        conv1_b: db1,
        conv2_w: dw2,
        conv2_b: db2,
    })
}

/// `aᵀ·b` flattened, f32 accumulation in fixed row order.
fn mul_tn(a: &Matrix, b: &Matrix) -> Vec<f32> {
    assert_eq!(a.rows(), b.rows());
    let (k, n) = (a.cols(), b.cols());
    let mut out = vec![0.0f32; k * n];
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

fn column_sums(m: &Matrix) -> Vec<f32> {
    let mut out = vec![0.0f32; m.cols()];
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r).iter()) {
            *o += v;
        }
    }
    out
}
