use alloc::vec::Vec;

use super::Activation;
use crate::error::{shape_err, Result};
use crate::numerics::Matrix;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(shape_err!("bias of {} for {} outputs", b.len(), weight.rows()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(crate::Error::NonFinite("bias"));
            }
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Position of one layer's parameters inside the flattened `theta`:
/// the weight row-major first, then the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSlot {
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> core::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.rows * self.cols
    }
}

/// Intermediate values of one forward pass: `activations[0]` is the input,
/// `activations[k]` the output of layer `k`, `pre[k-1]` its pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Feedforward network `x^k = σ_k(W_k x^{k-1} + b_k)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err!("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(shape_err!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].weight.cols(),
                    k,
                    pair[0].weight.rows()
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`.
    /// `widths` lists input width followed by each layer's output width.
    pub fn random(widths: &[usize], activations: &[Activation], bias: bool, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(shape_err!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            ));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in widths.windows(2).zip(activations) {
            let (inp, out) = (w[0], w[1]);
            let s = 1.0 / libm::sqrt(inp as f64);
            let weight = Matrix::from_vec(out, inp, rng::gaussian_vec(rng, out * inp).into_iter().map(|v| v * s).collect())?;
            let b = bias.then(|| rng::gaussian_vec(rng, out).into_iter().map(|v| 0.1 * v).collect());
            layers.push(Layer::new(weight, b, act)?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// Total trainable parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_bias_free(&self) -> bool {
        self.layers.iter().all(|l| l.bias.is_none())
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let (rows, cols) = l.weight.shape();
                let weight_offset = off;
                off += rows * cols;
                let bias_offset = l.bias.as_ref().map(|b| {
                    let o = off;
                    off += b.len();
                    o
                });
                LayerSlot { weight_offset, bias_offset, rows, cols }
            })
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            theta.extend_from_slice(l.weight.as_slice());
            if let Some(b) = &l.bias {
                theta.extend_from_slice(b);
            }
        }
        theta
    }

    /// Same architecture with parameters replaced by `theta`.
    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.param_count() {
            return Err(shape_err!("theta of {} for a net with d = {}", theta.len(), self.param_count()));
        }
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (rows, cols) = l.weight.shape();
            let weight = Matrix::from_vec(rows, cols, theta[off..off + rows * cols].to_vec())?;
            off += rows * cols;
            let bias = l.bias.as_ref().map(|b| {
                let v = theta[off..off + b.len()].to_vec();
                off += b.len();
                v
            });
            layers.push(Layer::new(weight, bias, l.activation)?);
        }
        Ok(Self { layers })
    }

    /// `theta + delta` as a network.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self> {
        let theta = self.params();
        if delta.len() != theta.len() {
            return Err(shape_err!("delta of {} for a net with d = {}", delta.len(), theta.len()));
        }
        self.with_params(&crate::numerics::add(&theta, delta))
    }

    /// Copy with layer `k`'s weight replaced.
    pub fn with_layer_weight(&self, k: usize, weight: Matrix) -> Result<Self> {
        let old = self.layers.get(k).ok_or_else(|| shape_err!("no layer {}", k))?;
        if old.weight.shape() != weight.shape() {
            return Err(shape_err!("weight {:?} replacing {:?}", weight.shape(), old.weight.shape()));
        }
        let mut layers = self.layers.clone();
        layers[k].weight = weight;
        Ok(Self { layers })
    }

    /// Weight block of layer `k` taken out of a flattened parameter-space vector.
    pub fn weight_block(&self, delta: &[f64], k: usize) -> Result<Matrix> {
        let slot = *self.layout().get(k).ok_or_else(|| shape_err!("no layer {}", k))?;
        if delta.len() != self.param_count() {
            return Err(shape_err!("delta of {} for a net with d = {}", delta.len(), self.param_count()));
        }
        Matrix::from_vec(slot.rows, slot.cols, delta[slot.weight_range()].to_vec())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape_err!("input of {} for a net expecting {}", x.len(), self.input_dim()));
        }
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = l.weight.matvec(&a)?;
            if let Some(b) = &l.bias {
                for (zi, bi) in z.iter_mut().zip(b) {
                    *zi += bi;
                }
            }
            a = z.into_iter().map(|v| l.activation.apply(v)).collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(shape_err!("input of {} for a net expecting {}", x.len(), self.input_dim()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for l in &self.layers {
            let mut z = l.weight.matvec(&activations[activations.len() - 1])?;
            if let Some(b) = &l.bias {
                for (zi, bi) in z.iter_mut().zip(b) {
                    *zi += bi;
                }
            }
            activations.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(ForwardTrace { activations, pre })
    }
}
