//! Deterministic full-batch empirical risk minimization for FFT (all of θ)
//! and PEFT (Φ only, chain rule through the reparameterization map).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::netcore::{DenseNet, LossKind, NetObjective, Objective, Sample};
use crate::numerics::{norm, sym_eigen, Matrix};
use crate::reparam::ReparamMap;
use crate::rng;

/// Gradient-norm stopping rule used when training to convergence.
pub const CONVERGENCE_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields))]
pub enum OptimizerKind {
    Gd,
    /// Adam with decoupled weight decay.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop early once the gradient norm falls below this.
    pub grad_tol: Option<f64>,
}

impl OptimizerConfig {
    pub fn gd(learning_rate: f64, steps: usize) -> Self {
        Self { kind: OptimizerKind::Gd, learning_rate, steps, weight_decay: 0.0, seed: 0, grad_tol: None }
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = Some(tol);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.steps == 0 {
            return bad("optimizer steps must be at least 1");
        }
        // A zero rate is admitted so that a single no-op step can be taken.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning rate must be finite and non-negative");
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad("weight decay must be finite and non-negative");
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0 && t.is_finite()) {
                return bad("gradient tolerance must be positive");
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    /// Loss at every visited iterate, starting with the initial point.
    pub losses: Vec<f64>,
    pub params: Vec<f64>,
    pub steps_taken: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

impl TrainTrace {
    pub fn first_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace always holds the initial loss")
    }
}

/// Runs the configured optimizer on `obj` from `x0`.
pub fn minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], opt: &OptimizerConfig) -> Result<TrainTrace> {
    opt.validate()?;
    if x0.len() != obj.dim() {
        return Err(shape_err!("start point of {} for an objective of dimension {}", x0.len(), obj.dim()));
    }
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut losses = Vec::with_capacity(opt.steps + 1);
    let mut step = 0;
    let mut converged = false;
    let grad_norm = loop {
        let (loss, grad) = obj.value_and_gradient(&x)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
        let gn = norm(&grad);
        if opt.grad_tol.is_some_and(|t| gn < t) {
            converged = true;
            break gn;
        }
        if step == opt.steps {
            break gn;
        }
        step += 1;
        let lr = opt.learning_rate;
        match opt.kind {
            OptimizerKind::Gd => {
                for (xi, gi) in x.iter_mut().zip(&grad) {
                    *xi -= lr * (gi + opt.weight_decay * *xi);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - libm::pow(beta1, step as f64);
                let c2 = 1.0 - libm::pow(beta2, step as f64);
                for i in 0..x.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let update = (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
                    x[i] -= lr * (update + opt.weight_decay * x[i]);
                }
            }
        }
    };
    Ok(TrainTrace { losses, params: x, steps_taken: step, final_grad_norm: grad_norm, converged })
}

/// `1/λ_max` of the Hessian at `x`: a step size under which gradient
/// descent is monotone on a convex quadratic.
pub fn stable_gd_rate<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> Result<f64> {
    let top = sym_eigen(&obj.hessian(x)?)?.max();
    if !(top > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: top });
    }
    Ok(1.0 / top)
}

/// Loss of `θ₀ + g(Φ)` as a function of `Φ`.
#[derive(Debug, Clone, Copy)]
pub struct PeftObjective<'a> {
    pub map: &'a ReparamMap,
    pub base: NetObjective<'a>,
    theta0: &'a [f64],
}

impl<'a> PeftObjective<'a> {
    pub fn new(map: &'a ReparamMap, base: NetObjective<'a>, theta0: &'a [f64]) -> Result<Self> {
        if map.d() != base.dim() || theta0.len() != base.dim() {
            return Err(shape_err!("map with d = {} over a net with d = {}", map.d(), base.dim()));
        }
        Ok(Self { map, base, theta0 })
    }

    pub fn theta(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let delta = self.map.apply(phi)?;
        Ok(self.theta0.iter().zip(&delta).map(|(a, b)| a + b).collect())
    }
}

impl Objective for PeftObjective<'_> {
    fn dim(&self) -> usize {
        self.map.k()
    }

    fn value(&self, phi: &[f64]) -> Result<f64> {
        self.base.value(&self.theta(phi)?)
    }

    fn value_and_gradient(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.base.value_and_gradient(&self.theta(phi)?)?;
        Ok((l, self.map.pull_back(phi, &g)?))
    }

    /// `JᵀHJ` plus the curvature of `g` itself (zero for linear maps).
    fn hessian(&self, phi: &[f64]) -> Result<Matrix> {
        let theta = self.theta(phi)?;
        let j = self.map.jacobian(phi)?;
        let h = self.base.hessian(&theta)?;
        let mut out = j.t_matmul(&h.matmul(&j)?)?;
        if !self.map.is_linear() {
            out = out.add(&self.map.second_order_term(phi, &self.base.gradient(&theta)?)?)?;
        }
        Ok(out.symmetrized())
    }
}

fn check_data(data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("training set is empty".into()));
    }
    Ok(())
}

pub fn train_full(net: &DenseNet, loss: LossKind, data: &[Sample], opt: &OptimizerConfig) -> Result<(DenseNet, TrainTrace)> {
    check_data(data)?;
    let obj = NetObjective::new(net, loss, data);
    let trace = minimize(&obj, &net.params(), opt)?;
    Ok((net.with_params(&trace.params)?, trace))
}

/// Trains `Φ` with `θ₀` frozen. The start point comes from
/// `map.initial_phi`, drawn from the optimizer seed.
pub fn train_peft(
    net: &DenseNet,
    map: &ReparamMap,
    loss: LossKind,
    data: &[Sample],
    opt: &OptimizerConfig,
) -> Result<(Vec<f64>, TrainTrace)> {
    check_data(data)?;
    let theta0 = net.params();
    let obj = PeftObjective::new(map, NetObjective::new(net, loss, data), &theta0)?;
    let mut r = rng::stream(opt.seed, 0, "peft-init");
    let trace = minimize(&obj, &map.initial_phi(&mut r), opt)?;
    Ok((trace.params.clone(), trace))
}

/// Full-batch GD to `grad_tol` with the step fixed at `1/λ_max` of the
/// starting Hessian. Intended for convex quadratic tasks.
pub fn converge<O: Objective + ?Sized>(obj: &O, x0: &[f64], max_steps: usize, grad_tol: f64) -> Result<TrainTrace> {
    let lr = stable_gd_rate(obj, x0)?;
    let trace = minimize(obj, x0, &OptimizerConfig::gd(lr, max_steps).with_grad_tol(grad_tol))?;
    if !trace.converged {
        return Err(Error::NotConverged { grad_norm: trace.final_grad_norm, tol: grad_tol });
    }
    Ok(trace)
}
