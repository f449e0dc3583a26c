//! Deterministic dense linear algebra and counter-based random numbers.
//!
//! Everything downstream (data generation, training, probing) builds on this
//! module. Tensors are `f32`; reductions that feed tolerance-sensitive math
//! (Gram matrices, losses, factorizations) accumulate in `f64`.

mod eig;
mod matrix;
mod rng;
mod solve;

pub use eig::sym_eig_topk;
pub use matrix::Matrix;
pub use rng::{mix_seed, RngStream};
pub use solve::{solve_spd, solve_spd_f64};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix not positive-definite: pivot {pivot:e} at column {col}")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),
}
