//! Closed-form ridge regression from teacher features to flow.

use super::DistillError;
use crate::numerics::{solve_spd_f64, Matrix};

/// The per-pair feature→flow map; treated as a constant once solved.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub a: Matrix, // d×2
}

impl LinearMap {
    pub fn zeros(d: usize) -> Self {
        LinearMap {
            a: Matrix::zeros(d, 2),
        }
    }
}

/// Solve `(x1ᵀx1 + γI) A = x1ᵀu1` with a 64-bit Gram accumulation and the
/// SPD factorization from `numerics`. γ = 0 is accepted for full-rank
/// feature matrices (used by the scale-ambiguity checks); training always
/// passes γ > 0.
pub fn ridge_solve(x1: &Matrix, u1: &Matrix, gamma: f32) -> Result<LinearMap, DistillError> {
    if x1.rows() != u1.rows() || u1.cols() != 2 {
        return Err(DistillError::ShapeMismatch(format!(
            "ridge_solve: features {}x{}, targets {}x{}",
            x1.rows(),
            x1.cols(),
            u1.rows(),
            u1.cols()
        )));
    }
    if !x1.is_finite() || !u1.is_finite() {
        return Err(DistillError::NonFiniteInput("ridge_solve input".into()));
    }
    let d = x1.cols();
    let mut gram = x1.gram_f64();
    for i in 0..d {
        gram[i * d + i] += gamma as f64;
    }
    let b = x1.mul_tn_f64(u1);
    let sol = solve_spd_f64(&gram, d, &b, 2)?;
    // normal-equation residual, checked on the f64 solution in debug builds
    debug_assert!(
        {
            let mut max_resid = 0.0f64;
            let mut max_b = 0.0f64;
            for i in 0..d {
                for c in 0..2 {
                    let mut acc = 0.0f64;
                    for j in 0..d {
                        acc += gram[i * d + j] * sol[j * 2 + c];
                    }
                    max_resid = max_resid.max((acc - b[i * 2 + c]).abs());
                    max_b = max_b.max(b[i * 2 + c].abs());
                }
            }
            max_resid <= 1e-4 * (1.0 + max_b)
        },
        "ridge normal-equation residual exceeded 1e-4 relative"
    );
    Ok(LinearMap {
        a: Matrix::from_vec(d, 2, sol.into_iter().map(|v| v as f32).collect()),
    })
}
