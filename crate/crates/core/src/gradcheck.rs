//! Finite-difference verification of the analytic gradients.
//!
//! A 64-bit shadow implementation (naive nested loops, independent of the
//! im2col path) evaluates the full loss; central differences on sampled
//! coordinates are compared against the analytic gradients from the f32
//! pipeline. Exposed to the CLI as `check-grad` and reused by the tests.

use crate::dataio::{FlowField, ImageF32};
use crate::decoder::{decoder_backward, decoder_forward, init_params, DecoderConfig, DecoderParams};
use crate::distill::{
    focal_grad_loss, recon_loss, ridge_solve, GradAxis, LinearMap, ReconKind,
};
use crate::encoder::{FeatureGrid, FrozenEncoder};
use crate::numerics::RngStream;

const REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub checks: Vec<CoordinateCheck>,
    pub worst: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_checks(name: &'static str, checks: Vec<CoordinateCheck>) -> Self {
        let worst = checks.iter().fold(0.0f64, |m, c| m.max(c.rel_err));
        GradCheckReport {
            name,
            checks,
            worst,
            passed: worst <= REL_TOL,
        }
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    // the f32 pipeline carries ~1e-5 of accumulated rounding noise; below
    // that floor a comparison measures noise, not gradient correctness
    let denom = analytic.abs().max(fd.abs()).max(1e-5);
    (analytic - fd).abs() / denom
}

/// Structured offsets keep the L1 residuals and the focal-difference terms
/// away from their kinks while leaving the sign pattern unbalanced, so bias
/// gradients do not cancel to rounding noise.
fn offset_targets(pred: &FlowField) -> FlowField {
    let mut out = pred.clone();
    for y in 0..out.height {
        for x in 0..out.width {
            let sign = if (x + y) % 3 == 0 { -1.0 } else { 1.0 };
            // magnitudes differ between any two 4-neighbors
            let m = 0.45 + 0.15 * ((x + 2 * y) % 3) as f32;
            let (u, v) = pred.get(y, x);
            out.set(y, x, u + sign * m, v - sign * (m + 0.1));
        }
    }
    out
}

/// ∂(mean |u2 − x2·a|)/∂x2 against shadow finite differences.
pub fn check_recon(seed: u64, samples: usize) -> GradCheckReport {
    let mut rng = RngStream::new(seed).child("recon", 0);
    let (n, d) = (24, 10);
    let x2 = crate::numerics::Matrix::from_fn(n, d, |_, _| rng.next_gaussian());
    let a = crate::numerics::Matrix::from_fn(d, 2, |_, _| rng.next_gaussian());
    let map = LinearMap { a };
    let pred = x2.matmul(&map.a);
    let mut u2 = pred.clone();
    for (i, v) in u2.data_mut().iter_mut().enumerate() {
        *v += if i % 2 == 0 { 0.7 } else { -0.5 };
    }
    let out = recon_loss(&x2, &map, &u2, ReconKind::L1).expect("recon_loss");
    let shadow: Vec<f64> = x2.data().iter().map(|&v| v as f64).collect();
    let loss64 = |x: &[f64]| -> f64 {
        let mut loss = 0.0f64;
        for r in 0..n {
            for c in 0..2 {
                let mut p = 0.0f64;
                for j in 0..d {
                    p += x[r * d + j] * map.a.get(j, c) as f64;
                }
                loss += (u2.get(r, c) as f64 - p).abs();
            }
        }
        loss / (n as f64 * 2.0)
    };
    let h = 1e-5f64;
    let mut checks = Vec::new();
    for _ in 0..samples {
        let idx = rng.next_index(n * d);
        let mut xp = shadow.clone();
        xp[idx] += h;
        let mut xm = shadow.clone();
        xm[idx] -= h;
        let fd = (loss64(&xp) - loss64(&xm)) / (2.0 * h);
        let analytic = out.grad_x2.data()[idx] as f64;
        checks.push(CoordinateCheck {
            tensor: "x2",
            index: idx,
            analytic,
            fd,
            rel_err: rel_err(analytic, fd),
        });
    }
    GradCheckReport::from_checks("recon-l1", checks)
}

/// Focal gradient-matching loss against shadow finite differences.
pub fn check_focal(seed: u64, samples: usize) -> GradCheckReport {
    let mut rng = RngStream::new(seed).child("focal", 0);
    let (w, h) = (7, 6);
    let mut pred = FlowField::zeros(w, h);
    for v in pred.vectors.iter_mut() {
        *v = rng.next_gaussian();
    }
    let target = offset_targets(&pred);
    let sigma = 0.1f32;
    let loss64 = |p: &[f64], axis: GradAxis| -> f64 {
        let (nx, ny) = match axis {
            GradAxis::X => (w - 1, h),
            GradAxis::Y => (w, h - 1),
        };
        let mut loss = 0.0f64;
        for y in 0..ny {
            for x in 0..nx {
                let (y1, x1) = match axis {
                    GradAxis::X => (y, x + 1),
                    GradAxis::Y => (y + 1, x),
                };
                for c in 0..2 {
                    let t0 = target.get(y, x);
                    let t1 = target.get(y1, x1);
                    let g = (if c == 0 { t1.0 - t0.0 } else { t1.1 - t0.1 }) as f64;
                    let gh = p[(y1 * w + x1) * 2 + c] - p[(y * w + x) * 2 + c];
                    let weight = 1.0 - (-g.abs() / sigma as f64).exp();
                    loss += weight * (g - gh).abs();
                }
            }
        }
        loss / ((nx * ny * 2) as f64)
    };
    let shadow: Vec<f64> = pred.vectors.iter().map(|&v| v as f64).collect();
    let step = 1e-5f64;
    let mut checks = Vec::new();
    for i in 0..samples {
        let axis = if i % 2 == 0 { GradAxis::X } else { GradAxis::Y };
        let (_, grad) = focal_grad_loss(&pred, &target, sigma, axis).expect("focal");
        let idx = rng.next_index(w * h * 2);
        let mut pp = shadow.clone();
        pp[idx] += step;
        let mut pm = shadow.clone();
        pm[idx] -= step;
        let fd = (loss64(&pp, axis) - loss64(&pm, axis)) / (2.0 * step);
        let analytic = grad.vectors[idx] as f64;
        checks.push(CoordinateCheck {
            tensor: "pred",
            index: idx,
            analytic,
            fd,
            rel_err: rel_err(analytic, fd),
        });
    }
    GradCheckReport::from_checks("focal-grad", checks)
}

/// Shadow f64 decoder forward: bilinear upsample, concat, conv, relu, conv.
struct Shadow {
    enc: FeatureGrid,
    crop: ImageF32,
    u2: FlowField,
    map: LinearMap,
    lambda: f64,
    sigma: f64,
    cfg: DecoderConfig,
}

impl Shadow {
    fn input_channels(&self) -> usize {
        self.cfg.enc_dim + 3
    }

    fn forward_loss(&self, p: &ShadowParams) -> f64 {
        let (h, w) = (self.crop.height, self.crop.width);
        let cin = self.input_channels();
        // bilinear upsample of the encoder grid (align-corners-false)
        let mut input = vec![0.0f64; h * w * cin];
        let scale_y = self.enc.height as f64 / h as f64;
        let scale_x = self.enc.width as f64 / w as f64;
        for oy in 0..h {
            let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (self.enc.height - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.enc.height - 1);
            let fy = sy - y0 as f64;
            for ox in 0..w {
                let sx =
                    ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (self.enc.width - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.enc.width - 1);
                let fx = sx - x0 as f64;
                for c in 0..self.cfg.enc_dim {
                    let v = (1.0 - fy)
                        * ((1.0 - fx) * self.enc.at(y0, x0, c) as f64
                            + fx * self.enc.at(y0, x1, c) as f64)
                        + fy * ((1.0 - fx) * self.enc.at(y1, x0, c) as f64
                            + fx * self.enc.at(y1, x1, c) as f64);
                    input[(oy * w + ox) * cin + c] = v;
                }
                for c in 0..3 {
                    input[(oy * w + ox) * cin + self.cfg.enc_dim + c] =
                        self.crop.get(oy, ox, c) as f64;
                }
            }
        }
        let hidden = shadow_conv(&input, h, w, cin, self.cfg.hidden, &p.w1, &p.b1, true);
        let feat = shadow_conv(
            &hidden,
            h,
            w,
            self.cfg.hidden,
            self.cfg.feature_dim,
            &p.w2,
            &p.b2,
            false,
        );
        // prediction through the fixed map
        let d = self.cfg.feature_dim;
        let mut pred = vec![0.0f64; h * w * 2];
        for n in 0..h * w {
            for c in 0..2 {
                let mut acc = 0.0f64;
                for j in 0..d {
                    acc += feat[n * d + j] * self.map.a.get(j, c) as f64;
                }
                pred[n * 2 + c] = acc;
            }
        }
        // L1 term
        let mut l1 = 0.0f64;
        for n in 0..h * w {
            let y = n / w;
            let x = n % w;
            let (u, v) = self.u2.get(y, x);
            l1 += (u as f64 - pred[n * 2]).abs() + (v as f64 - pred[n * 2 + 1]).abs();
        }
        l1 /= (h * w * 2) as f64;
        // focal terms
        let mut total = self.lambda * l1;
        for axis in [GradAxis::X, GradAxis::Y] {
            let (nx, ny) = match axis {
                GradAxis::X => (w - 1, h),
                GradAxis::Y => (w, h - 1),
            };
            let mut loss = 0.0f64;
            for y in 0..ny {
                for x in 0..nx {
                    let (y1, x1) = match axis {
                        GradAxis::X => (y, x + 1),
                        GradAxis::Y => (y + 1, x),
                    };
                    let t0 = self.u2.get(y, x);
                    let t1 = self.u2.get(y1, x1);
                    for c in 0..2 {
                        let g = (if c == 0 { t1.0 - t0.0 } else { t1.1 - t0.1 }) as f64;
                        let gh = pred[(y1 * w + x1) * 2 + c] - pred[(y * w + x) * 2 + c];
                        let weight = 1.0 - (-g.abs() / self.sigma).exp();
                        loss += weight * (g - gh).abs();
                    }
                }
            }
            total += loss / ((nx * ny * 2) as f64);
        }
        total
    }
}

struct ShadowParams {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl ShadowParams {
    fn from(params: &DecoderParams) -> Self {
        ShadowParams {
            w1: params.conv1.weights.iter().map(|&v| v as f64).collect(),
            b1: params.conv1.bias.iter().map(|&v| v as f64).collect(),
            w2: params.conv2.weights.iter().map(|&v| v as f64).collect(),
            b2: params.conv2.bias.iter().map(|&v| v as f64).collect(),
        }
    }

    fn tensor_mut(&mut self, t: usize) -> &mut Vec<f64> {
        match t {
            0 => &mut self.w1,
            1 => &mut self.b1,
            2 => &mut self.w2,
            _ => &mut self.b2,
        }
    }
}

/// Naive nested-loop 3×3 convolution in f64, optional ReLU.
#[allow(clippy::too_many_arguments)]
fn shadow_conv(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    bias: &[f64],
    relu: bool,
) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w * cout];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for oc in 0..cout {
                let mut acc = bias[oc];
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let (sy, sx) = (y + ky - 1, x + kx - 1);
                        if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let wi = (((ky * 3 + kx) as usize) * cin + ic) * cout + oc;
                            acc += weights[wi] * input[((sy as usize) * w + sx as usize) * cin + ic];
                        }
                    }
                }
                if relu && acc < 0.0 {
                    acc = 0.0;
                }
                out[(y as usize * w + x as usize) * cout + oc] = acc;
            }
        }
    }
    out
}

/// Full loss-through-decoder gradient check on a small instance.
///
/// `perturb` injects a deliberate error into one analytic gradient entry;
/// the report must then fail (negative control).
pub fn check_decoder_chain(seed: u64, samples: usize, perturb: bool) -> GradCheckReport {
    let root = RngStream::new(seed);
    let cfg = DecoderConfig {
        enc_dim: 6,
        hidden: 8,
        feature_dim: 12,
    };
    let params = init_params(&cfg, root.child("params", 0).seed());
    let mut rng = root.child("data", 0);
    let size = 16usize;
    let mut crop = ImageF32::zeros(size, size);
    for v in crop.data.iter_mut() {
        *v = rng.next_uniform();
    }
    let mut enc = FeatureGrid::zeros(2, 2, cfg.enc_dim);
    for v in enc.data.iter_mut() {
        *v = rng.next_gaussian() * 0.5;
    }

    // fixed linear map from a ridge solve on the unperturbed features
    let (feat, cache) = decoder_forward(&params, &enc, &crop).expect("forward");
    let x2 = feat.as_matrix();
    let mut flow_target = FlowField::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            flow_target.set(y, x, 0.2 * x as f32, -0.1 * y as f32);
        }
    }
    let map = ridge_solve(&x2, &flow_target.as_matrix(), 1.0).expect("ridge");
    let pred = FlowField::from_matrix(size, size, &x2.matmul(&map.a));
    let u2 = offset_targets(&pred);
    let (lambda, sigma) = (0.1f32, 0.1f32);

    // analytic gradient through the f32 pipeline
    let recon = recon_loss(&x2, &map, &u2.as_matrix(), ReconKind::L1).expect("recon");
    let mut grad_x2 = recon.grad_x2;
    grad_x2.scale(lambda);
    let (_, gx) = focal_grad_loss(&pred, &u2, sigma, GradAxis::X).expect("focal x");
    let (_, gy) = focal_grad_loss(&pred, &u2, sigma, GradAxis::Y).expect("focal y");
    let mut dpred = gx.as_matrix();
    dpred.add_assign(&gy.as_matrix());
    grad_x2.add_assign(&dpred.matmul(&map.a.transpose()));
    let grad_grid = FeatureGrid::from_matrix(size, size, &grad_x2);
    let mut grads = decoder_backward(&params, &cache, &grad_grid).expect("backward");
    if perturb {
        // negative control: corrupt every entry so any sampled coordinate fails
        for t in grads.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * 1.2 + 0.01;
            }
        }
    }

    let shadow = Shadow {
        enc,
        crop,
        u2,
        map,
        lambda: lambda as f64,
        sigma: sigma as f64,
        cfg,
    };
    let base = ShadowParams::from(&params);
    let names = ["conv1_w", "conv1_b", "conv2_w", "conv2_b"];
    let grad_tensors = grads.tensors();
    let h = 1e-4f64;
    let mut coord_rng = root.child("coords", 0);
    let mut checks = Vec::new();
    for _ in 0..samples {
        let t = coord_rng.next_index(4);
        let len = grad_tensors[t].len();
        let idx = coord_rng.next_index(len);
        let mut pp = ShadowParams::from(&params);
        pp.tensor_mut(t)[idx] = base.tensor_mut_ref(t)[idx] + h;
        let lp = shadow.forward_loss(&pp);
        let mut pm = ShadowParams::from(&params);
        pm.tensor_mut(t)[idx] = base.tensor_mut_ref(t)[idx] - h;
        let lm = shadow.forward_loss(&pm);
        let fd = (lp - lm) / (2.0 * h);
        let analytic = grad_tensors[t][idx] as f64;
        checks.push(CoordinateCheck {
            tensor: names[t],
            index: idx,
            analytic,
            fd,
            rel_err: rel_err(analytic, fd),
        });
    }
    GradCheckReport::from_checks("decoder-chain", checks)
}

impl ShadowParams {
    fn tensor_mut_ref(&self, t: usize) -> &Vec<f64> {
        match t {
            0 => &self.w1,
            1 => &self.b1,
            2 => &self.w2,
            _ => &self.b2,
        }
    }
}

/// The three finite-difference suites behind `check-grad`.
pub fn run_all(seed: u64, samples: usize, perturb: bool) -> Vec<GradCheckReport> {
    vec![
        check_recon(seed, samples),
        check_focal(seed, samples),
        check_decoder_chain(seed, samples, perturb),
    ]
}

#[allow(dead_code)]
fn unused_encoder_hint(_: &FrozenEncoder) {}
