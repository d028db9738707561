use alloc::vec::Vec;

use super::{dot, norm, svd::DEFAULT_RANK_TOL, Matrix};
use crate::error::{Error, Result};

/// Orthonormal basis of the column span (modified Gram–Schmidt, two passes).
///
/// Fails with `RankDeficient` when a column's residual after projection falls
/// below `DEFAULT_RANK_TOL` times the largest input column norm.
pub fn orthonormalize(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("orthonormalize input")?;
    let cols = m.columns();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut rank = 0;
    for c in cols.iter() {
        let mut w = c.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= proj * qi;
                }
            }
        }
        let r = norm(&w);
        if scale == 0.0 || r <= DEFAULT_RANK_TOL * scale {
            continue;
        }
        rank += 1;
        basis.push(w.into_iter().map(|x| x / r).collect());
    }
    if rank < m.cols() {
        return Err(Error::RankDeficient { rank, expected: m.cols() });
    }
    Matrix::from_columns(m.rows(), &basis)
}

/// `Q Qᵀ x` for a matrix `q` with orthonormal columns.
pub fn project_onto(q: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    q.matvec(&q.t_matvec(x)?)
}
