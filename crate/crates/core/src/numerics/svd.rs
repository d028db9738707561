use alloc::vec;
use alloc::vec::Vec;

use super::{dot, norm, Matrix};
use crate::error::{shape_err, Error, Result};

/// Sweep budget of the one-sided Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Default relative cut-off below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Thin SVD `m = u · diag(sigma) · vt` with `p = min(rows, cols)` triplets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.vt.cols());
        Matrix::from_fn(m, n, |i, j| {
            self.sigma
                .iter()
                .enumerate()
                .map(|(k, s)| self.u[(i, k)] * s * self.vt[(k, j)])
                .sum()
        })
    }

    /// Number of singular values above `rank_tol · sigma_max`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let cutoff = rank_tol * self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > cutoff && s > 0.0).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    m.ensure_finite("svd input")?;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(shape_err!("svd of an empty {}x{} matrix", m.rows(), m.cols()));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult { u: t.vt.transpose(), sigma: t.sigma, vt: t.u.transpose() });
    }
    let (rows, n) = m.shape();
    let mut a = m.columns();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = (rows as f64) * f64::EPSILON;
    // Columns reduced to rounding noise never satisfy the relative test;
    // they fall under the null cut below and are left alone.
    let fro = m.frobenius_norm() * f64::EPSILON;
    let noise = fro * fro;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || alpha <= noise || beta <= noise || gamma.abs() <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma[0];
    let null_cut = smax * f64::EPSILON * rows as f64;

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > null_cut && norms[j] > 0.0 {
            ucols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            ucols.push(vec![0.0; rows]);
            missing.push(slot);
        }
    }
    for &slot in &missing {
        ucols[slot] = complete_basis(&ucols, slot, rows);
    }

    let u = Matrix::from_columns(rows, &ucols)?;
    let vt = Matrix::from_fn(n, n, |k, i| v[order[k]][i]);
    Ok(SvdResult { u, sigma, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Unit vector orthogonal to every nonzero column in `cols` (other than `slot`),
/// taken from the standard basis vector with the largest residual.
fn complete_basis(cols: &[Vec<f64>], slot: usize, rows: usize) -> Vec<f64> {
    let mut best = vec![0.0; rows];
    let mut best_norm = -1.0;
    for i in 0..rows {
        let mut e = vec![0.0; rows];
        e[i] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == slot || c.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let proj = dot(c, &e);
                for (ei, ci) in e.iter_mut().zip(c) {
                    *ei -= proj * ci;
                }
            }
        }
        let r = norm(&e);
        if r > best_norm {
            best_norm = r;
            best = e;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Moore–Penrose pseudo-inverse; singular values `<= rank_tol · sigma_max`
/// are treated as zero.
pub fn pinv(m: &Matrix, rank_tol: f64) -> Result<Matrix> {
    m.ensure_finite("pinv input")?;
    if !(rank_tol >= 0.0) {
        return Err(Error::ConfigInvalid(alloc::format!("rank_tol {rank_tol} must be >= 0")));
    }
    let s = svd(m)?;
    let cutoff = rank_tol * s.sigma[0];
    let keep: Vec<(usize, f64)> = s
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cutoff && v > 0.0)
        .map(|(k, &v)| (k, 1.0 / v))
        .collect();
    Ok(Matrix::from_fn(m.cols(), m.rows(), |i, j| {
        keep.iter().map(|&(k, inv)| s.vt[(k, i)] * inv * s.u[(j, k)]).sum()
    }))
}

/// Numerical rank under a relative tolerance.
pub fn numerical_rank(m: &Matrix, rank_tol: f64) -> Result<usize> {
    Ok(svd(m)?.rank(rank_tol))
}

/// Best rank-`r` approximation and its squared Frobenius error
/// `sum_{i>r} sigma_i^2`.
pub fn rank_truncate(m: &Matrix, r: usize) -> Result<(Matrix, f64)> {
    let max = m.rows().min(m.cols());
    if r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    let s = svd(m)?;
    Ok(truncate_from(&s, m, r))
}

/// Truncation reusing an existing decomposition of `m`.
pub fn truncate_from(s: &SvdResult, m: &Matrix, r: usize) -> (Matrix, f64) {
    let tail: f64 = s.sigma[r.min(s.sigma.len())..].iter().map(|x| x * x).sum();
    if r >= s.sigma.len() {
        return (m.clone(), 0.0);
    }
    let approx = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        (0..r).map(|k| s.u[(i, k)] * s.sigma[k] * s.vt[(k, j)]).sum()
    });
    (approx, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::from_seed(seed);
        Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols)).unwrap()
    }

    fn ortho_err(m: &Matrix) -> f64 {
        m.t_matmul(m).unwrap().sub(&Matrix::identity(m.cols())).unwrap().frobenius_norm()
    }

    #[test]
    fn diagonal_and_identity() {
        let s = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 1.0]);
        for i in 0..2 {
            assert_eq!(s.u[(i, i)].abs(), 1.0);
            assert_eq!(s.vt[(i, i)].abs(), 1.0);
        }
        let s = svd(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 1.0]);
        assert_eq!(svd(&Matrix::identity(2)).unwrap().sigma, vec![1.0, 1.0]);
    }

    #[test]
    fn random_reconstruction() {
        let m = random(5, 3, 7);
        let s = svd(&m).unwrap();
        assert!(s.reconstruct().sub(&m).unwrap().frobenius_norm() < 1e-10);
        assert!(ortho_err(&s.u) < 1e-12);
        assert!(ortho_err(&s.vt.transpose()) < 1e-12);
        let wide = m.transpose();
        let s = svd(&wide).unwrap();
        assert_eq!(s.u.shape(), (3, 3));
        assert_eq!(s.vt.shape(), (3, 5));
        assert!(s.reconstruct().sub(&wide).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_completes_u() {
        let m = Matrix::zeros(4, 3);
        let s = svd(&m).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        assert!(ortho_err(&s.u) < 1e-12);
        let m = Matrix::outer(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 0.5]);
        let s = svd(&m).unwrap();
        assert_eq!(s.rank(DEFAULT_RANK_TOL), 1);
        assert!(ortho_err(&s.u) < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(Error::ShapeMismatch(_))));
        let mut m = Matrix::zeros(2, 2);
        m.as_mut_slice()[1] = f64::INFINITY;
        assert_eq!(svd(&m), Err(Error::NonFinite("svd input")));
        assert_eq!(
            rank_truncate(&Matrix::identity(2), 3).unwrap_err(),
            Error::RankOutOfRange { rank: 3, max: 2 }
        );
    }

    #[test]
    fn pinv_examples() {
        let p = pinv(&Matrix::diag(&[2.0, 0.0]), 1e-12).unwrap();
        assert_eq!(p, Matrix::diag(&[0.5, 0.0]));
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let inv = Matrix::from_rows(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        assert!(pinv(&m, 1e-12).unwrap().sub(&inv).unwrap().frobenius_norm() < 1e-12);
        assert_eq!(pinv(&Matrix::zeros(2, 3), 1e-12).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn truncation_examples() {
        let (t, tail) = rank_truncate(&Matrix::diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!(t.sub(&Matrix::diag(&[3.0, 2.0, 0.0])).unwrap().frobenius_norm() < 1e-14);
        assert!((tail - 1.0).abs() < 1e-14);
        let m = random(6, 4, 3);
        let (full, tail) = rank_truncate(&m, 4).unwrap();
        assert_eq!(full, m);
        assert_eq!(tail, 0.0);
        let (t2, tail) = rank_truncate(&m, 2).unwrap();
        let resid = m.sub(&t2).unwrap().frobenius_norm();
        assert!((resid * resid - tail).abs() < 1e-10);
        let (z, tail0) = rank_truncate(&m, 0).unwrap();
        assert_eq!(z, Matrix::zeros(6, 4));
        assert!((tail0 - m.frobenius_norm() * m.frobenius_norm()).abs() < 1e-10);
    }
}
