//! Flow reconstruction losses: robust L1 (or the L2 ablation) through the
//! fixed linear map, and focal gradient matching on spatial flow
//! derivatives. Loss values accumulate in f64; all losses are means over
//! their entries so the hyperparameter defaults transfer across crop sizes.

use super::{DistillError, LinearMap};
use crate::dataio::FlowField;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradAxis {
    X,
    Y,
}

/// Per-step loss report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f32,
    pub grad_x: f32,
    pub grad_y: f32,
    pub total: f32,
}

/// `total = (grad_x + grad_y) + λ·l1`.
pub fn total_loss(l1: f32, grad_x: f32, grad_y: f32, lambda: f32) -> LossBreakdown {
    LossBreakdown {
        l1,
        grad_x,
        grad_y,
        total: (grad_x + grad_y) + lambda * l1,
    }
}

/// Reconstruction loss output. `grad_x2` is the gradient through the fixed
/// map (stop-gradient on `a`); `grad_pred` is the gradient w.r.t. the raw
/// prediction `x2·a`, used by the shared-map ablation.
#[derive(Debug, Clone)]
pub struct ReconLoss {
    pub loss: f64,
    pub grad_x2: Matrix,
    pub grad_pred: Matrix,
}

/// Mean-per-entry reconstruction loss of `u2` against `x2·a`.
///
/// L1: loss = mean |r|, ∂loss/∂x2 = −sign(r)·aᵀ / (N·2), sign(0) = 0.
/// L2: loss = mean r², ∂loss/∂pred = −2r / (N·2).
pub fn recon_loss(
    x2: &Matrix,
    map: &LinearMap,
    u2: &Matrix,
    kind: ReconKind,
) -> Result<ReconLoss, DistillError> {
    if x2.rows() != u2.rows() || u2.cols() != 2 || map.a.rows() != x2.cols() {
        return Err(DistillError::ShapeMismatch(format!(
            "recon_loss: x2 {}x{}, a {}x{}, u2 {}x{}",
            x2.rows(),
            x2.cols(),
            map.a.rows(),
            map.a.cols(),
            u2.rows(),
            u2.cols()
        )));
    }
    let n = x2.rows();
    let norm = 1.0 / (n as f64 * 2.0);
    let pred = x2.matmul(&map.a);
    let mut loss = 0.0f64;
    let mut grad_pred = Matrix::zeros(n, 2);
    for i in 0..n * 2 {
        let r = (u2.data()[i] - pred.data()[i]) as f64;
        match kind {
            ReconKind::L1 => {
                loss += r.abs();
                let s = if r > 0.0 {
                    -1.0
                } else if r < 0.0 {
                    1.0
                } else {
                    0.0
                };
                grad_pred.data_mut()[i] = (s * norm) as f32;
            }
            ReconKind::L2 => {
                loss += r * r;
                grad_pred.data_mut()[i] = (-2.0 * r * norm) as f32;
            }
        }
    }
    let grad_x2 = grad_pred.matmul(&map.a.transpose());
    Ok(ReconLoss {
        loss: loss * norm,
        grad_x2,
        grad_pred,
    })
}

/// Focal weight on a target gradient magnitude: `1 − exp(−|g|/σ)`.
pub fn focal_weight(g: f64, sigma: f64) -> f64 {
    1.0 - (-g.abs() / sigma).exp()
}

/// Focal gradient matching along one axis.
///
/// With `g` the forward difference of the target and `ĝ` of the prediction,
/// the loss is the mean over valid positions of `w·|g − ĝ|` where
/// `w = 1 − exp(−|g|/σ)` depends only on the target. The returned gradient
/// w.r.t. the prediction is the adjoint of the forward-difference operator
/// applied to `w·(−sign(g − ĝ))/count`.
pub fn focal_grad_loss(
    pred: &FlowField,
    target: &FlowField,
    sigma: f32,
    axis: GradAxis,
) -> Result<(f64, FlowField), DistillError> {
    if pred.width != target.width || pred.height != target.height {
        return Err(DistillError::ShapeMismatch(format!(
            "focal_grad_loss: pred {}x{}, target {}x{}",
            pred.width, pred.height, target.width, target.height
        )));
    }
    let (w, h) = (pred.width, pred.height);
    let (nx, ny) = match axis {
        GradAxis::X => (w.saturating_sub(1), h),
        GradAxis::Y => (w, h.saturating_sub(1)),
    };
    let mut grad = FlowField::zeros(w, h);
    if nx == 0 || ny == 0 {
        return Ok((0.0, grad));
    }
    let count = (nx * ny * 2) as f64;
    let sigma = sigma as f64;
    let mut loss = 0.0f64;
    for y in 0..ny {
        for x in 0..nx {
            let (ty1, tx1) = match axis {
                GradAxis::X => (y, x + 1),
                GradAxis::Y => (y + 1, x),
            };
            let t0 = target.get(y, x);
            let t1 = target.get(ty1, tx1);
            let p0 = pred.get(y, x);
            let p1 = pred.get(ty1, tx1);
            for (c, (g, gh)) in [
                ((t1.0 - t0.0) as f64, (p1.0 - p0.0) as f64),
                ((t1.1 - t0.1) as f64, (p1.1 - p0.1) as f64),
            ]
            .into_iter()
            .enumerate()
            {
                let weight = focal_weight(g, sigma);
                let diff = g - gh;
                loss += weight * diff.abs();
                let s = if diff > 0.0 {
                    -1.0
                } else if diff < 0.0 {
                    1.0
                } else {
                    0.0
                };
                let adj = (weight * s / count) as f32;
                let i1 = (ty1 * w + tx1) * 2 + c;
                let i0 = (y * w + x) * 2 + c;
                grad.vectors[i1] += adj;
                grad.vectors[i0] -= adj;
            }
        }
    }
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn zero_map_zero_targets_is_silent() {
        let x2 = Matrix::from_fn(16, 4, |r, c| (r + c) as f32 * 0.1);
        let map = LinearMap::zeros(4);
        let u2 = Matrix::zeros(16, 2);
        let out = recon_loss(&x2, &map, &u2, ReconKind::L1).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_x2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_map_kills_gradient_path() {
        // A* = 0 with nonzero targets: loss = mean|u2|, but grad wrt x2 = 0
        let x2 = Matrix::from_fn(8, 4, |r, c| (r * 4 + c) as f32);
        let map = LinearMap::zeros(4);
        let mut u2 = Matrix::zeros(8, 2);
        for (i, v) in u2.data_mut().iter_mut().enumerate() {
            *v = (i as f32) - 4.0;
        }
        let out = recon_loss(&x2, &map, &u2, ReconKind::L1).unwrap();
        let expect: f64 = u2.data().iter().map(|&v| v.abs() as f64).sum::<f64>() / 16.0;
        assert!((out.loss - expect).abs() < 1e-9);
        assert!(out.grad_x2.data().iter().all(|&v| v == 0.0));
    }

    /// Shadow f64 evaluation of the L1 objective, for finite differences.
    fn l1_loss_f64(x2: &[f64], a: &Matrix, u2: &Matrix, n: usize, d: usize) -> f64 {
        let mut loss = 0.0f64;
        for r in 0..n {
            for c in 0..2 {
                let mut pred = 0.0f64;
                for j in 0..d {
                    pred += x2[r * d + j] * a.get(j, c) as f64;
                }
                loss += (u2.get(r, c) as f64 - pred).abs();
            }
        }
        loss / (n as f64 * 2.0)
    }

    /// Finite differences in a 64-bit shadow, residuals nudged off the kink.
    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5);
        let (n, d) = (12, 6);
        let x2 = Matrix::from_fn(n, d, |_, _| rng.next_gaussian());
        let map = LinearMap {
            a: Matrix::from_fn(d, 2, |_, _| rng.next_gaussian()),
        };
        // u2 = x2·a + offset keeps every residual away from the L1 kink
        let pred = x2.matmul(&map.a);
        let mut u2 = pred.clone();
        for v in u2.data_mut().iter_mut() {
            let off = 0.3 + 0.7 * rng.next_uniform();
            *v += if rng.next_uniform() < 0.5 { off } else { -off };
        }
        let out = recon_loss(&x2, &map, &u2, ReconKind::L1).unwrap();
        let shadow: Vec<f64> = x2.data().iter().map(|&v| v as f64).collect();
        let h = 1e-5f64;
        for idx in [0usize, 7, 13, 25, n * d - 1] {
            let mut xp = shadow.clone();
            xp[idx] += h;
            let lp = l1_loss_f64(&xp, &map.a, &u2, n, d);
            let mut xm = shadow.clone();
            xm[idx] -= h;
            let lm = l1_loss_f64(&xm, &map.a, &u2, n, d);
            let fd = (lp - lm) / (2.0 * h);
            let an = out.grad_x2.data()[idx] as f64;
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-3,
                "idx {idx}: analytic {an}, fd {fd}"
            );
        }
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(6);
        let (n, d) = (10, 5);
        let x2 = Matrix::from_fn(n, d, |_, _| rng.next_gaussian());
        let map = LinearMap {
            a: Matrix::from_fn(d, 2, |_, _| rng.next_gaussian()),
        };
        let u2 = Matrix::from_fn(n, 2, |_, _| rng.next_gaussian() * 2.0);
        let out = recon_loss(&x2, &map, &u2, ReconKind::L2).unwrap();
        let h = 1e-3f32;
        for idx in [1usize, 9, 22, 37] {
            let mut xp = x2.clone();
            xp.data_mut()[idx] += h;
            let lp = recon_loss(&xp, &map, &u2, ReconKind::L2).unwrap().loss;
            let mut xm = x2.clone();
            xm.data_mut()[idx] -= h;
            let lm = recon_loss(&xm, &map, &u2, ReconKind::L2).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = out.grad_x2.data()[idx] as f64;
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(((an - fd) / denom).abs() < 1e-3);
        }
    }

    #[test]
    fn static_target_silences_focal_loss() {
        let mut rng = RngStream::new(7);
        let mut pred = FlowField::zeros(6, 6);
        for v in pred.vectors.iter_mut() {
            *v = rng.next_gaussian();
        }
        let target = FlowField::zeros(6, 6);
        for axis in [GradAxis::X, GradAxis::Y] {
            let (loss, grad) = focal_grad_loss(&pred, &target, 0.1, axis).unwrap();
            assert_eq!(loss, 0.0);
            assert!(grad.vectors.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn focal_weight_at_sigma() {
        let w = focal_weight(0.1, 0.1);
        assert!((w - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((w - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn focal_weight_monotonicity() {
        // strictly increasing in |g|, strictly decreasing in sigma, on grids
        // where the exponential has not saturated past f64 resolution
        let mut prev = -1.0;
        for i in 0..100 {
            let g = i as f64 * 0.02;
            let w = focal_weight(g, 0.1);
            assert!(w > prev, "g {g}");
            prev = w;
        }
        let mut prev = 2.0;
        for i in 1..=100 {
            let sigma = 0.02 + i as f64 * 0.02;
            let w = focal_weight(0.5, sigma);
            assert!(w < prev, "sigma {sigma}");
            prev = w;
        }
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(8);
        let mut target = FlowField::zeros(5, 5);
        let mut pred = FlowField::zeros(5, 5);
        for v in target.vectors.iter_mut() {
            *v = rng.next_gaussian();
        }
        // keep |g − ĝ| away from the kink
        for (i, v) in pred.vectors.iter_mut().enumerate() {
            *v = target.vectors[i] + 0.5 + 0.05 * (i as f32);
        }
        for axis in [GradAxis::X, GradAxis::Y] {
            let (_, grad) = focal_grad_loss(&pred, &target, 0.1, axis).unwrap();
            let h = 1e-3f32;
            for idx in [0usize, 3, 11, 24, 49] {
                let mut pp = pred.clone();
                pp.vectors[idx] += h;
                let lp = focal_grad_loss(&pp, &target, 0.1, axis).unwrap().0;
                let mut pm = pred.clone();
                pm.vectors[idx] -= h;
                let lm = focal_grad_loss(&pm, &target, 0.1, axis).unwrap().0;
                let fd = (lp - lm) / (2.0 * h as f64);
                let an = grad.vectors[idx] as f64;
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((an - fd) / denom).abs() < 1e-3,
                    "axis {axis:?} idx {idx}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let z = total_loss(0.0, 0.0, 0.0, 0.1);
        assert_eq!(z.total, 0.0);
        let t = total_loss(1.0, 0.0, 0.0, 0.1);
        assert!((t.total - 0.1).abs() < 1e-7);
        // λ = 0 removes the reconstruction term entirely
        let t = total_loss(123.0, 0.25, 0.5, 0.0);
        assert!((t.total - 0.75).abs() < 1e-7);
    }
}
