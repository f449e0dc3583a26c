//! Top-k symmetric eigenpairs by shifted power iteration with deflation.

use super::{Matrix, NumericsError};

const MAX_ITERS: usize = 10_000;

/// Top-`k` eigenvalues (descending) and eigenvectors of a symmetric matrix.
///
/// Works on `a + c·I` internally (c = ‖a‖F) so the algebraically largest
/// eigenvalue dominates the power iteration even when `a` is indefinite.
/// Each eigenvector's sign is fixed so its largest-magnitude entry is
/// positive.
pub fn sym_eig_topk(a: &Matrix, k: usize) -> Result<(Vec<f32>, Matrix), NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "sym_eig_topk expects square input, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let d = a.rows();
    if k == 0 || k > d {
        return Err(NumericsError::DimensionMismatch(format!(
            "sym_eig_topk: k={k} out of range for d={d}"
        )));
    }
    debug_assert!(
        (0..d).all(|i| (0..d).all(|j| (a.get(i, j) - a.get(j, i)).abs() <= 1e-5)),
        "sym_eig_topk input not symmetric"
    );

    let fro: f64 = a.frobenius();
    let shift = fro.max(1.0);
    // shifted working copy, deflated in place as eigenpairs are found
    let mut b: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    for i in 0..d {
        b[i * d + i] += shift;
    }
    let tol = 1e-9 * shift.max(fro);

    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);

    for found in 0..k {
        let mut v = start_vector(d, found);
        orthogonalize(&mut v, &vectors);
        normalize(&mut v);
        let mut lambda_shifted = 0.0f64;
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            let mut w = matvec(&b, d, &v);
            orthogonalize(&mut w, &vectors);
            lambda_shifted = dot(&v, &w);
            // residual of the Rayleigh pair on the deflated matrix
            let mut res = 0.0f64;
            for i in 0..d {
                let r = w[i] - lambda_shifted * v[i];
                res += r * r;
            }
            if res.sqrt() <= tol {
                converged = true;
                break;
            }
            normalize(&mut w);
            v = w;
        }
        if !converged {
            return Err(NumericsError::NoConvergence(MAX_ITERS));
        }
        // deflate: b -= lambda v vᵀ
        for i in 0..d {
            for j in 0..d {
                b[i * d + j] -= lambda_shifted * v[i] * v[j];
            }
        }
        values.push((lambda_shifted - shift) as f32);
        vectors.push(v);
    }

    let mut out = Matrix::zeros(d, k);
    for (c, v) in vectors.iter().enumerate() {
        let mut best = 0usize;
        for (i, val) in v.iter().enumerate() {
            if val.abs() > v[best].abs() {
                best = i;
            }
        }
        let flip = if v[best] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            out.set(r, c, (v[r] * flip) as f32);
        }
    }
    Ok((values, out))
}

/// Fixed pseudo-random start pattern; varied per eigenvector index so a
/// restart never begins orthogonal to the target by construction.
fn start_vector(d: usize, which: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let h = (i as u64 + 1)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(which as u64 * 0x517c_c1b7_2722_0a95);
            1.0 + ((h >> 32) & 0xffff) as f64 / 65536.0
        })
        .collect()
}

fn matvec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let row = &m[i * d..(i + 1) * d];
            row.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for u in basis {
        let d = dot(v, u);
        for (vi, ui) in v.iter_mut().zip(u.iter()) {
            *vi -= d * ui;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for vi in v.iter_mut() {
            *vi /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn diagonal_case() {
        let a = Matrix::from_vec(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eig_topk(&a, 2).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-5);
        assert!((vals[1] - 2.0).abs() < 1e-5);
        for (c, expect) in [(0usize, 0usize), (1, 1)] {
            for r in 0..3 {
                let e = if r == expect { 1.0 } else { 0.0 };
                assert!((vecs.get(r, c) - e).abs() < 1e-4, "vec {c} row {r}");
            }
        }
    }

    #[test]
    fn degenerate_spectrum_returns_unit_vector() {
        let a = Matrix::identity(3);
        let (vals, vecs) = sym_eig_topk(&a, 1).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-5);
        let norm: f32 = (0..3).map(|r| vecs.get(r, 0) * vecs.get(r, 0)).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        let mut best = 0;
        for r in 0..3 {
            if vecs.get(r, 0).abs() > vecs.get(best, 0).abs() {
                best = r;
            }
        }
        assert!(vecs.get(best, 0) > 0.0);
    }

    /// Cyclic Jacobi eigendecomposition, the brute-force oracle.
    fn jacobi_eig(a: &Matrix) -> Vec<f64> {
        let d = a.rows();
        let mut m: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += m[i * d + j] * m[i * d + j];
                }
            }
            if off.sqrt() < 1e-13 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = m[p * d + q];
                    if apq.abs() < 1e-15 {
                        continue;
                    }
                    let app = m[p * d + p];
                    let aqq = m[q * d + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..d {
                        let mrp = m[r * d + p];
                        let mrq = m[r * d + q];
                        m[r * d + p] = c * mrp - s * mrq;
                        m[r * d + q] = s * mrp + c * mrq;
                    }
                    for col in 0..d {
                        let mpc = m[p * d + col];
                        let mqc = m[q * d + col];
                        m[p * d + col] = c * mpc - s * mqc;
                        m[q * d + col] = s * mpc + c * mqc;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
        vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
        vals
    }

    #[test]
    fn matches_jacobi_oracle() {
        let mut rng = RngStream::new(11);
        let mut a = Matrix::zeros(6, 6);
        for i in 0..6 {
            for j in i..6 {
                let v = rng.next_gaussian();
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let (vals, vecs) = sym_eig_topk(&a, 3).unwrap();
        let oracle = jacobi_eig(&a);
        for i in 0..3 {
            assert!(
                (vals[i] as f64 - oracle[i]).abs() < 1e-6,
                "eig {i}: {} vs {}",
                vals[i],
                oracle[i]
            );
        }
        // residual bound on the original matrix
        let fro = a.frobenius() as f32;
        for c in 0..3 {
            let mut res = 0.0f32;
            for r in 0..6 {
                let mut av = 0.0f32;
                for t in 0..6 {
                    av += a.get(r, t) * vecs.get(t, c);
                }
                let diff = av - vals[c] * vecs.get(r, c);
                res += diff * diff;
            }
            assert!(res.sqrt() <= 1e-4 * fro, "residual for vec {c}");
        }
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let mut rng = RngStream::new(29);
        let n = 12;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.next_gaussian();
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let (_, v) = sym_eig_topk(&a, 4).unwrap();
        for c1 in 0..4 {
            for c2 in 0..4 {
                let dot: f32 = (0..n).map(|r| v.get(r, c1) * v.get(r, c2)).sum();
                let expect = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() <= 1e-5, "VtV[{c1},{c2}] = {dot}");
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let a = Matrix::identity(3);
        assert!(sym_eig_topk(&a, 0).is_err());
        assert!(sym_eig_topk(&a, 4).is_err());
    }
}
