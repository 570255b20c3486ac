//! Small dense factorizations: cyclic Jacobi for symmetric eigenproblems,
//! one-sided Jacobi SVD, and Gaussian elimination.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and orthonormal eigenvectors as columns.
/// Each eigenvector has its first entry of magnitude above 1e-12 made positive.
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    // Symmetrize away representation noise so rotations stay exact.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence("Jacobi eigensolver", MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]));
    let values = order.iter().map(|&k| a[(k, k)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.col(src);
        fix_sign(&mut col);
        vectors.set_col(dst, &col);
    }
    Ok((values, vectors))
}

fn fix_sign(col: &mut [f64]) {
    if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// m×k left singular vectors; columns for zero singular values are zero.
    pub u: DenseMatrix,
    /// k = min(m, n) singular values, descending.
    pub sigma: Vec<f64>,
    /// n×k right singular vectors.
    pub v: DenseMatrix,
}

pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let (rows, n) = m.shape();
    // Work at unit scale so squared column norms cannot overflow.
    let scale = m.max_abs();
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut w = m.scale(1.0 / scale);
    let mut v = DenseMatrix::identity(n);
    let mut converged = n < 2;
    // Columns below this squared norm are rounding noise of a rank-deficient input.
    let negligible = (rows as f64 * f64::EPSILON * w.frobenius_norm()).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..rows {
                    let x = w[(k, p)];
                    let y = w[(k, q)];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma.abs() <= 1e-15 * alpha.sqrt() * beta.sqrt()
                    || gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let x = w[(k, p)];
                    let y = w[(k, q)];
                    w[(k, p)] = c * x - s * y;
                    w[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)];
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("Jacobi SVD", MAX_SWEEPS));
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..rows).map(|k| w[(k, j)] * w[(k, j)]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = DenseMatrix::zeros(rows, n);
    let mut vs = DenseMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s * scale);
        if s > 1e-300 && s > top * 1e-15 {
            for k in 0..rows {
                u[(k, dst)] = w[(k, src)] / s;
            }
        }
        for k in 0..n {
            vs[(k, dst)] = v[(k, src)];
        }
    }
    Ok(Svd { u, sigma, v: vs })
}

pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.sigma)
}

pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Numerical rank: singular values above `tol` times the largest one.
pub fn rank(m: &DenseMatrix, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > tol * top).count())
}

/// Solve `a x = b` for square `a` by Gaussian elimination with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n {
        return Err(Error::Dimension(format!(
            "solve with {}x{} system and {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = m.max_abs();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap_or(col);
        if m[(pivot, col)].abs() <= 1e-14 * scale {
            return Err(Error::Degenerate("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                let t = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = t;
            }
            for k in 0..x.cols() {
                let t = x[(col, k)];
                x[(col, k)] = x[(pivot, k)];
                x[(pivot, k)] = t;
            }
        }
        let d = m[(col, col)];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            for k in 0..x.cols() {
                x[(r, k)] -= f * x[(col, k)];
            }
        }
    }
    for r in 0..n {
        let d = m[(r, r)];
        for k in 0..x.cols() {
            x[(r, k)] /= d;
        }
    }
    Ok(x)
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    solve(a, &DenseMatrix::identity(a.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal() {
        let (vals, vecs) = symmetric_eigen(&DenseMatrix::diag(&[-2.0, 3.0])).unwrap();
        assert_eq!(vals, vec![3.0, -2.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((vecs[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigen_reconstructs() {
        let m = DenseMatrix::from_fn(5, 5, |i, j| ((i + 1) * (j + 1)) as f64 / 7.0 + (i == j) as u8 as f64);
        let m = m.add(&m.transpose()).unwrap();
        let (vals, u) = symmetric_eigen(&m).unwrap();
        let back = u.matmul(&DenseMatrix::diag(&vals)).unwrap().matmul_t(&u).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-12);
        let gram = u.t_matmul(&u).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(5)) < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        for (r, c) in [(3, 5), (5, 3), (4, 4)] {
            let m = DenseMatrix::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64);
            let s = svd(&m).unwrap();
            let back = s
                .u
                .matmul(&DenseMatrix::diag(&s.sigma))
                .unwrap()
                .matmul_t(&s.v)
                .unwrap();
            assert!(back.max_abs_diff(&m) < 1e-12, "{r}x{c}");
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_of_outer_product() {
        let a = DenseMatrix::column_vector(&[1.0, 2.0, 3.0]);
        let b = DenseMatrix::column_vector(&[4.0, -1.0]);
        assert_eq!(rank(&a.matmul_t(&b).unwrap(), 1e-9).unwrap(), 1);
        assert_eq!(rank(&DenseMatrix::zeros(2, 2), 1e-9).unwrap(), 0);
    }

    #[test]
    fn svd_converges_on_rank_deficient_products() {
        for seed in 0..300 {
            let mut r = crate::rng::stream(seed, "deficient");
            let a = crate::rng::normal_matrix(&mut r, 4, 2, 1.0);
            let b = crate::rng::normal_matrix(&mut r, 2, 3, 1.0);
            let m = a.matmul(&b).unwrap();
            assert_eq!(rank(&m, 1e-9).unwrap(), 2, "seed {seed}");
        }
    }

    #[test]
    fn svd_handles_huge_nearly_rank_one() {
        let u = DenseMatrix::column_vector(&[0.9, -0.87, -0.027, -0.33, -0.064, 0.15]);
        let v = DenseMatrix::column_vector(&[1.0, 0.757, 1.351]);
        let noise = DenseMatrix::from_fn(6, 3, |i, j| 1e-17 * ((i * 3 + j) as f64).sin());
        let m = u.matmul_t(&v).unwrap().add(&noise).unwrap().scale(1e77);
        let s = svd(&m).unwrap();
        assert!((s.sigma[0] - 1e77 * u.frobenius_norm() * v.frobenius_norm()).abs() < 1e65);
        assert_eq!(rank(&m, 1e-9).unwrap(), 1);
    }

    #[test]
    fn inverse_round_trip() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]);
        let inv = inverse(&a).unwrap();
        assert!(a.matmul(&inv).unwrap().max_abs_diff(&DenseMatrix::identity(3)) < 1e-14);
        assert!(inverse(&DenseMatrix::zeros(2, 2)).is_err());
    }
}
