use alloc::vec::Vec;

use super::autodiff::{self, HessianBundle, HESSIAN_SIZE_CAP};
use super::{DenseNet, LossKind, Sample};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{dot, Matrix};

/// A twice-differentiable scalar function of a parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn hessian(&self, theta: &[f64]) -> Result<Matrix>;

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.value_and_gradient(theta).map(|(_, g)| g)
    }

    fn bundle(&self, theta: &[f64]) -> Result<HessianBundle> {
        if self.dim() > HESSIAN_SIZE_CAP {
            return Err(Error::TooLarge { d: self.dim(), cap: HESSIAN_SIZE_CAP });
        }
        HessianBundle::new(theta.to_vec(), self.gradient(theta)?, self.hessian(theta)?)
    }
}

/// Mean batch loss of a fixed architecture as a function of its parameters.
#[derive(Debug, Clone, Copy)]
pub struct NetObjective<'a> {
    pub net: &'a DenseNet,
    pub loss: LossKind,
    pub batch: &'a [Sample],
}

impl<'a> NetObjective<'a> {
    pub fn new(net: &'a DenseNet, loss: LossKind, batch: &'a [Sample]) -> Self {
        Self { net, loss, batch }
    }
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.net.param_count()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        autodiff::loss(&self.net.with_params(theta)?, self.loss, self.batch)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        autodiff::loss_and_gradient(&self.net.with_params(theta)?, self.loss, self.batch)
    }

    fn hessian(&self, theta: &[f64]) -> Result<Matrix> {
        autodiff::hessian_matrix(&self.net.with_params(theta)?, self.loss, self.batch)
    }
}

/// `½ θᵀAθ + bᵀθ + c` with symmetric `A`; a zero-layer probe whose
/// derivatives are known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProbe {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticProbe {
    pub fn new(a: Matrix, b: Vec<f64>, c: f64) -> Result<Self> {
        if a.rows() != a.cols() || b.len() != a.rows() {
            return Err(shape_err!("probe with A {:?} and b of {}", a.shape(), b.len()));
        }
        Ok(Self { a: a.symmetrized(), b, c })
    }

    /// `‖θ‖²`.
    pub fn squared_norm(d: usize) -> Self {
        Self { a: Matrix::identity(d).scale(2.0), b: alloc::vec![0.0; d], c: 0.0 }
    }
}

impl Objective for QuadraticProbe {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let at = self.a.matvec(theta)?;
        Ok(0.5 * dot(theta, &at) + dot(&self.b, theta) + self.c)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let at = self.a.matvec(theta)?;
        let v = 0.5 * dot(theta, &at) + dot(&self.b, theta) + self.c;
        Ok((v, at.iter().zip(&self.b).map(|(x, y)| x + y).collect()))
    }

    fn hessian(&self, _theta: &[f64]) -> Result<Matrix> {
        Ok(self.a.clone())
    }
}
