//! Small dense feedforward networks with exact derivatives.

mod activation;
mod autodiff;
mod loss;
mod net;
mod objective;

use alloc::vec::Vec;

pub use activation::{Activation, GELU_LIPSCHITZ};
pub use autodiff::{
    gradient, hessian, hessian_matrix, hessian_vector_product, loss, loss_and_gradient, HessianBundle,
    HESSIAN_SIZE_CAP,
};
pub use loss::{softmax, LossKind};
pub use net::{DenseNet, ForwardTrace, Layer, LayerSlot};
pub use objective::{NetObjective, Objective, QuadraticProbe};

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}
