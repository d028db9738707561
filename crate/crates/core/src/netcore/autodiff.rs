//! Exact first and second derivatives of the mean batch loss.
//!
//! The gradient is ordinary backpropagation. Hessian-vector products push a
//! directional derivative through both the forward and backward passes
//! (forward-over-reverse), which is exact for these networks; the dense
//! Hessian is assembled one basis direction per column.

use alloc::vec;
use alloc::vec::Vec;

use super::net::{ForwardTrace, LayerSlot};
use super::{DenseNet, LossKind, Sample};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{sym_eigen, Matrix, SymEigen};

/// Largest parameter count for which a dense Hessian is formed.
pub const HESSIAN_SIZE_CAP: usize = 400;

fn check_batch(net: &DenseNet, batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(shape_err!("empty batch"));
    }
    for s in batch {
        if s.x.len() != net.input_dim() || s.y.len() != net.output_dim() {
            return Err(shape_err!(
                "sample ({}, {}) for a {}-to-{} net",
                s.x.len(),
                s.y.len(),
                net.input_dim(),
                net.output_dim()
            ));
        }
    }
    Ok(())
}

pub fn loss(net: &DenseNet, loss: LossKind, batch: &[Sample]) -> Result<f64> {
    check_batch(net, batch)?;
    let mut total = 0.0;
    for s in batch {
        total += loss.value(&net.forward(&s.x)?, &s.y);
    }
    let v = total / batch.len() as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Accumulates `∂ℓ/∂θ` for one sample into `grad`; returns `ℓ`.
fn backprop(net: &DenseNet, layout: &[LayerSlot], trace: &ForwardTrace, loss: LossKind, y: &[f64], grad: &mut [f64]) -> f64 {
    let out = trace.output();
    let value = loss.value(out, y);
    let mut ga = loss.gradient(out, y);
    for (k, (layer, slot)) in net.layers().iter().zip(layout).enumerate().rev() {
        let z = &trace.pre[k];
        let a_prev = &trace.activations[k];
        let gz: Vec<f64> = z.iter().zip(&ga).map(|(&zi, &g)| layer.activation.derivative(zi) * g).collect();
        for (i, &g) in gz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[slot.weight_offset + i * slot.cols..slot.weight_offset + (i + 1) * slot.cols];
            for (r, &a) in row.iter_mut().zip(a_prev) {
                *r += g * a;
            }
        }
        if let Some(bo) = slot.bias_offset {
            for (r, &g) in grad[bo..bo + slot.rows].iter_mut().zip(&gz) {
                *r += g;
            }
        }
        if k > 0 {
            ga = layer.weight.t_matvec(&gz).expect("layer shapes verified at construction");
        }
    }
    value
}

/// Mean batch loss and its exact gradient with respect to the flattened `θ`.
pub fn loss_and_gradient(net: &DenseNet, loss: LossKind, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    check_batch(net, batch)?;
    let layout = net.layout();
    let mut grad = vec![0.0; net.param_count()];
    let mut total = 0.0;
    for s in batch {
        let trace = net.forward_trace(&s.x)?;
        total += backprop(net, &layout, &trace, loss, &s.y, &mut grad);
    }
    let n = batch.len() as f64;
    let value = total / n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((value, grad))
}

pub fn gradient(net: &DenseNet, loss: LossKind, batch: &[Sample]) -> Result<Vec<f64>> {
    loss_and_gradient(net, loss, batch).map(|(_, g)| g)
}

/// Accumulates `H_sample · v` into `out`.
fn hvp_sample(net: &DenseNet, layout: &[LayerSlot], trace: &ForwardTrace, loss: LossKind, y: &[f64], v: &[f64], out: &mut [f64]) {
    let depth = net.depth();
    // Directional derivatives of pre-activations and activations.
    let mut rz: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut ra: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    ra.push(vec![0.0; net.input_dim()]);
    for (k, (layer, slot)) in net.layers().iter().zip(layout).enumerate() {
        let a_prev = &trace.activations[k];
        let mut r = layer.weight.matvec(&ra[k]).expect("shapes");
        for (i, ri) in r.iter_mut().enumerate() {
            let vrow = &v[slot.weight_offset + i * slot.cols..slot.weight_offset + (i + 1) * slot.cols];
            *ri += crate::numerics::dot(vrow, a_prev);
            if let Some(bo) = slot.bias_offset {
                *ri += v[bo + i];
            }
        }
        let rak = r.iter().zip(&trace.pre[k]).map(|(&rv, &z)| layer.activation.derivative(z) * rv).collect();
        rz.push(r);
        ra.push(rak);
    }

    let outp = trace.output();
    let mut ga = loss.gradient(outp, y);
    let mut rga = loss.hessian_vec(outp, y, &ra[depth]);
    for (k, (layer, slot)) in net.layers().iter().zip(layout).enumerate().rev() {
        let z = &trace.pre[k];
        let act = layer.activation;
        let gz: Vec<f64> = z.iter().zip(&ga).map(|(&zi, &g)| act.derivative(zi) * g).collect();
        let rgz: Vec<f64> = (0..z.len())
            .map(|i| act.second_derivative(z[i]) * rz[k][i] * ga[i] + act.derivative(z[i]) * rga[i])
            .collect();
        let a_prev = &trace.activations[k];
        let ra_prev = &ra[k];
        for i in 0..slot.rows {
            let row = &mut out[slot.weight_offset + i * slot.cols..slot.weight_offset + (i + 1) * slot.cols];
            for (j, r) in row.iter_mut().enumerate() {
                *r += rgz[i] * a_prev[j] + gz[i] * ra_prev[j];
            }
        }
        if let Some(bo) = slot.bias_offset {
            for (r, &g) in out[bo..bo + slot.rows].iter_mut().zip(&rgz) {
                *r += g;
            }
        }
        if k > 0 {
            let w = &layer.weight;
            let vk = &v[slot.weight_range()];
            let mut next_rga = w.t_matvec(&rgz).expect("shapes");
            for i in 0..slot.rows {
                for (j, nr) in next_rga.iter_mut().enumerate() {
                    *nr += vk[i * slot.cols + j] * gz[i];
                }
            }
            ga = w.t_matvec(&gz).expect("shapes");
            rga = next_rga;
        }
    }
}

/// Exact Hessian-vector product of the mean batch loss.
pub fn hessian_vector_product(net: &DenseNet, loss: LossKind, batch: &[Sample], v: &[f64]) -> Result<Vec<f64>> {
    check_batch(net, batch)?;
    if v.len() != net.param_count() {
        return Err(shape_err!("direction of {} for d = {}", v.len(), net.param_count()));
    }
    let layout = net.layout();
    let mut out = vec![0.0; v.len()];
    for s in batch {
        let trace = net.forward_trace(&s.x)?;
        hvp_sample(net, &layout, &trace, loss, &s.y, v, &mut out);
    }
    let n = batch.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Dense Hessian of the mean batch loss, symmetrized.
pub fn hessian_matrix(net: &DenseNet, loss: LossKind, batch: &[Sample]) -> Result<Matrix> {
    check_batch(net, batch)?;
    let d = net.param_count();
    if d > HESSIAN_SIZE_CAP {
        return Err(Error::TooLarge { d, cap: HESSIAN_SIZE_CAP });
    }
    let layout = net.layout();
    let traces: Vec<ForwardTrace> = batch.iter().map(|s| net.forward_trace(&s.x)).collect::<Result<_>>()?;
    let mut h = Matrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        col.iter_mut().for_each(|c| *c = 0.0);
        for (s, trace) in batch.iter().zip(&traces) {
            hvp_sample(net, &layout, trace, loss, &s.y, &e, &mut col);
        }
        for i in 0..d {
            h[(i, j)] = col[i] / batch.len() as f64;
        }
        e[j] = 0.0;
    }
    h.ensure_finite("hessian")?;
    Ok(h.symmetrized())
}

/// Exact loss Hessian, gradient, and optionally its spectrum at a point.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HessianBundle {
    pub point: Vec<f64>,
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
    pub eigen: Option<SymEigen>,
}

impl HessianBundle {
    pub fn new(point: Vec<f64>, gradient: Vec<f64>, hessian: Matrix) -> Result<Self> {
        let d = point.len();
        if gradient.len() != d || hessian.shape() != (d, d) {
            return Err(shape_err!("bundle with point {}, gradient {}, hessian {:?}", d, gradient.len(), hessian.shape()));
        }
        Ok(Self { point, gradient, hessian, eigen: None })
    }

    pub fn with_eigen(mut self) -> Result<Self> {
        if self.eigen.is_none() {
            self.eigen = Some(sym_eigen(&self.hessian)?);
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        match &self.eigen {
            Some(e) => Ok(e.min()),
            None => Ok(sym_eigen(&self.hessian)?.min()),
        }
    }

    /// Shifts the Hessian by `λI` so its smallest eigenvalue is at least
    /// `floor`; returns the shifted bundle and `λ` (0 when no shift was needed).
    pub fn regularized(&self, floor: f64) -> Result<(HessianBundle, f64)> {
        let min = self.min_eigenvalue()?;
        if min > floor {
            return Ok((self.clone(), 0.0));
        }
        let lambda = 2.0 * floor - min;
        let d = self.dim();
        let h = self.hessian.add(&Matrix::identity(d).scale(lambda))?;
        Ok((HessianBundle::new(self.point.clone(), self.gradient.clone(), h)?.with_eigen()?, lambda))
    }
}

pub fn hessian(net: &DenseNet, loss: LossKind, batch: &[Sample]) -> Result<HessianBundle> {
    let h = hessian_matrix(net, loss, batch)?;
    let g = gradient(net, loss, batch)?;
    HessianBundle::new(net.params(), g, h)
}
