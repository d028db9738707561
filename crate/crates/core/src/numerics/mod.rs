//! Dense linear-algebra kernels and finite-difference oracles.

mod diff;
mod eigen;
mod matrix;
mod ortho;
mod svd;

pub use diff::{finite_diff_gradient, finite_diff_jacobian};
pub use eigen::{cholesky, cholesky_solve, spd_inverse, sym_eigen, SymEigen};
pub use matrix::Matrix;
pub use ortho::{orthonormalize, project_onto};
pub use svd::{
    numerical_rank, pinv, rank_truncate, svd, truncate_from, SvdResult, DEFAULT_RANK_TOL,
    MAX_SWEEPS,
};

/// Relative Frobenius tolerance for reconstruction checks.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn add(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> alloc::vec::Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(f64::MIN_POSITIVE)
}
