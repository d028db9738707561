use alloc::vec::Vec;

use super::Matrix;
use crate::error::{shape_err, Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: eigenvalues nondecreasing,
/// eigenvectors as the matching columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V f(Λ) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        Matrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)]).sum()
        })
    }
}

/// Cyclic Jacobi eigensolver; the input is symmetrized first.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    m.ensure_finite("sym_eigen input")?;
    let n = m.rows();
    if n != m.cols() || n == 0 {
        return Err(shape_err!("sym_eigen expects a nonempty square matrix, got {:?}", m.shape()));
    }
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let target = (f64::EPSILON * scale) * (f64::EPSILON * scale);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(p, k)] = a[(k, p)];
                    a[(k, q)] = s * akp + c * akq;
                    a[(q, k)] = a[(k, q)];
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymEigen { values, vectors })
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("cholesky input")?;
    let n = m.rows();
    if n != m.cols() {
        return Err(shape_err!("cholesky of non-square {:?}", m.shape()));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            let min_eigenvalue = sym_eigen(m).map(|e| e.min()).unwrap_or(diag);
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        let ljj = libm::sqrt(diag);
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n {
        return Err(shape_err!("rhs of {} for a {}x{} factor", b.len(), n, n));
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let l = cholesky(m)?;
    let n = m.rows();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = alloc::vec![0.0; n];
        e[j] = 1.0;
        cols.push(cholesky_solve(&l, &e)?);
    }
    Ok(Matrix::from_columns(n, &cols)?.symmetrized())
}
