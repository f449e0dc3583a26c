//! Symmetric positive-definite linear solve via Cholesky factorization.

use super::{Matrix, NumericsError};

/// Solve `a * x = rhs` for SPD `a`, working in f64 internally.
///
/// `a` is length `d*d` row-major, `rhs` is `d*k` row-major. Fails with
/// `NotPositiveDefinite` when a pivot drops to zero or below.
pub fn solve_spd_f64(
    a: &[f64],
    d: usize,
    rhs: &[f64],
    k: usize,
) -> Result<Vec<f64>, NumericsError> {
    assert_eq!(a.len(), d * d, "solve_spd_f64: bad a length");
    assert_eq!(rhs.len(), d * k, "solve_spd_f64: bad rhs length");
    // lower-triangular factor, packed row-major
    let mut l = vec![0.0f64; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for t in 0..j {
            diag -= l[j * d + t] * l[j * d + t];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NumericsError::NotPositiveDefinite { col: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for t in 0..j {
                s -= l[i * d + t] * l[j * d + t];
            }
            l[i * d + j] = s / ljj;
        }
    }
    // forward then backward substitution, per rhs column
    let mut x = rhs.to_vec();
    for c in 0..k {
        for i in 0..d {
            let mut s = x[i * k + c];
            for t in 0..i {
                s -= l[i * d + t] * x[t * k + c];
            }
            x[i * k + c] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = x[i * k + c];
            for t in (i + 1)..d {
                s -= l[t * d + i] * x[t * k + c];
            }
            x[i * k + c] = s / l[i * d + i];
        }
    }
    Ok(x)
}

/// Solve `a * s = rhs` for a symmetric positive-definite `a`.
pub fn solve_spd(a: &Matrix, rhs: &Matrix) -> Result<Matrix, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "solve_spd expects square a, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if rhs.rows() != a.rows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "solve_spd rhs has {} rows, a is {}x{}",
            rhs.rows(),
            a.rows(),
            a.cols()
        )));
    }
    let d = a.rows();
    debug_assert!(
        (0..d).all(|i| (0..d).all(|j| (a.get(i, j) - a.get(j, i)).abs() <= 1e-6)),
        "solve_spd input not symmetric within 1e-6"
    );
    let a64: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let rhs64: Vec<f64> = rhs.data().iter().map(|&v| v as f64).collect();
    let x = solve_spd_f64(&a64, d, &rhs64, rhs.cols())?;
    Ok(Matrix::from_vec(
        d,
        rhs.cols(),
        x.into_iter().map(|v| v as f32).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn residual_inf(a: &Matrix, s: &Matrix, rhs: &Matrix) -> f32 {
        let back = a.matmul(s);
        let mut r = 0.0f32;
        for (x, y) in back.data().iter().zip(rhs.data().iter()) {
            r = r.max((x - y).abs());
        }
        r
    }

    /// SPD instance with a controlled spectrum, built as Q diag(lam) Qᵀ.
    fn random_spd(d: usize, seed: u64, lam_lo: f32, lam_hi: f32) -> Matrix {
        let mut rng = RngStream::new(seed);
        // random orthogonal via Gram-Schmidt on a gaussian matrix
        let mut q = vec![vec![0.0f64; d]; d];
        for col in q.iter_mut() {
            for v in col.iter_mut() {
                *v = rng.next_gaussian() as f64;
            }
        }
        for i in 0..d {
            for j in 0..i {
                let dot: f64 = (0..d).map(|r| q[i][r] * q[j][r]).sum();
                for r in 0..d {
                    q[i][r] -= dot * q[j][r];
                }
            }
            let norm: f64 = (0..d).map(|r| q[i][r] * q[i][r]).sum::<f64>().sqrt();
            for r in 0..d {
                q[i][r] /= norm;
            }
        }
        let lam: Vec<f64> = (0..d)
            .map(|_| rng.next_range(lam_lo, lam_hi) as f64)
            .collect();
        Matrix::from_fn(d, d, |r, c| {
            (0..d).map(|t| q[t][r] * lam[t] * q[t][c]).sum::<f64>() as f32
        })
    }

    #[test]
    fn identity_case() {
        let a = Matrix::identity(2);
        let rhs = Matrix::from_vec(2, 1, vec![3.0, 4.0]);
        let s = solve_spd(&a, &rhs).unwrap();
        assert_eq!(s.data(), &[3.0, 4.0]);
    }

    #[test]
    fn diagonal_case() {
        let a = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 2.0]);
        let rhs = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 2.0]);
        let s = solve_spd(&a, &rhs).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    /// Conjugate-gradient oracle, run in f64 to residual 1e-10.
    fn cg_solve(a: &Matrix, b: &[f32]) -> Vec<f64> {
        let d = a.rows();
        let a64: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let matvec = |x: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|i| (0..d).map(|j| a64[i * d + j] * x[j]).sum())
                .collect()
        };
        let mut x = vec![0.0f64; d];
        let mut r = b64.clone();
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        for _ in 0..10_000 {
            if rs.sqrt() <= 1e-10 {
                break;
            }
            let ap = matvec(&p);
            let alpha = rs / p.iter().zip(ap.iter()).map(|(x, y)| x * y).sum::<f64>();
            for i in 0..d {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rs_new / rs;
            for i in 0..d {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_new;
        }
        x
    }

    #[test]
    fn matches_conjugate_gradient_oracle() {
        let a = random_spd(8, 7, 0.5, 20.0);
        let mut rng = RngStream::new(70);
        let rhs = Matrix::from_fn(8, 2, |_, _| rng.next_gaussian());
        let s = solve_spd(&a, &rhs).unwrap();
        for c in 0..2 {
            let col: Vec<f32> = (0..8).map(|r| rhs.get(r, c)).collect();
            let oracle = cg_solve(&a, &col);
            for r in 0..8 {
                assert!(
                    (s.get(r, c) as f64 - oracle[r]).abs() < 1e-4,
                    "row {r} col {c}: {} vs {}",
                    s.get(r, c),
                    oracle[r]
                );
            }
        }
    }

    #[test]
    fn residual_bound_up_to_256() {
        for (i, &d) in [2usize, 3, 8, 17, 64, 128, 256].iter().enumerate() {
            let a = random_spd(d, 100 + i as u64, 0.5, 50.0);
            let mut rng = RngStream::new(200 + i as u64);
            let rhs = Matrix::from_fn(d, 3, |_, _| rng.next_gaussian());
            let s = solve_spd(&a, &rhs).unwrap();
            let rel = residual_inf(&a, &s, &rhs) / rhs.max_abs();
            assert!(rel <= 1e-5, "d={d}: relative residual {rel}");
        }
    }

    #[test]
    fn rejects_non_spd() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        let rhs = Matrix::from_vec(2, 1, vec![1.0, 1.0]);
        match solve_spd(&a, &rhs) {
            Err(NumericsError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let a = Matrix::identity(3);
        let rhs = Matrix::from_vec(2, 1, vec![1.0, 1.0]);
        assert!(matches!(
            solve_spd(&a, &rhs),
            Err(NumericsError::DimensionMismatch(_))
        ));
    }
}
