//! Central-difference oracles.

use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::ConfigInvalid(alloc::format!("step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector function; row `i` is output `i`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], h: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::ConfigInvalid(alloc::format!("step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    let mut rows = 0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        rows = plus.len();
        if plus.iter().chain(&minus).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        cols.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect::<Vec<_>>());
    }
    Matrix::from_columns(rows, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let z = finite_diff_gradient(|_| 3.5, &[1.0, -1.0, 0.0], 1e-3).unwrap();
        assert_eq!(z, alloc::vec![0.0; 3]);
    }

    #[test]
    fn non_finite_rejected() {
        let r = finite_diff_gradient(|x| if x[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3);
        assert_eq!(r, Err(Error::NonFinite("finite-difference evaluation")));
    }
}
