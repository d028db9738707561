//! The PEFT image as a proper subset of parameter space, and the
//! layer-wise capacity bound on how far a tuned network can move.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{shape_err, Error, Result};
use crate::netcore::{Activation, DenseNet, Layer};
use crate::numerics::{norm, numerical_rank, project_onto, Matrix, DEFAULT_RANK_TOL};
use crate::reparam::{MapKind, ReparamMap};
use crate::rng::{self, Rng};
use crate::runner::TrialRunner;

/// Smallest admissible Gaussian residual to `span(P)`.
pub const RESIDUAL_FLOOR: f64 = 1e-6;
/// Relative floating-point slack allowed on the capacity inequality.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubspaceReport {
    pub kind: MapKind,
    pub d: usize,
    pub k: usize,
    pub projection_rank: usize,
    pub residual_samples: Vec<f64>,
    pub min_residual: f64,
    pub residual_floor: f64,
    pub passed: bool,
}

/// `‖(I − QQᵀ)v‖ / ‖v‖` for orthonormal `Q`.
pub fn relative_residual(q: &Matrix, v: &[f64]) -> Result<f64> {
    let vn = norm(v);
    if vn == 0.0 {
        return Err(Error::DivisionDegenerate);
    }
    let p = project_onto(q, v)?;
    let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
    Ok((norm(&r) / vn).min(1.0))
}

pub fn verify_nonsurjectivity(map: &ReparamMap, n_samples: usize, seed: u64) -> Result<SubspaceReport> {
    let p = map.materialize_projection()?;
    let projection_rank = numerical_rank(&p, DEFAULT_RANK_TOL)?;
    let q = map.orthonormal_basis()?;
    let mut r = rng::stream(seed, 0, "nonsurjectivity");
    let mut residual_samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        residual_samples.push(relative_residual(&q, &rng::gaussian_vec(&mut r, map.d()))?);
    }
    let min_residual = residual_samples.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = projection_rank == map.k() && map.k() < map.d() && (n_samples == 0 || min_residual > RESIDUAL_FLOOR);
    Ok(SubspaceReport {
        kind: map.kind(),
        d: map.d(),
        k: map.k(),
        projection_rank,
        residual_samples,
        min_residual,
        residual_floor: RESIDUAL_FLOOR,
        passed,
    })
}

/// `‖f(x) − f₀(x)‖` with `f` the base net shifted by `g(Φ)`.
pub fn output_deviation(net0: &DenseNet, map: &ReparamMap, phi: &[f64], x: &[f64]) -> Result<f64> {
    let tuned = net0.shifted(&map.apply(phi)?)?;
    let a = tuned.forward(x)?;
    let b = net0.forward(x)?;
    Ok(norm(&crate::numerics::sub(&a, &b)))
}

/// Forward pass of the adapted model with `g(Φ)` added to each weight as
/// it is read, independent of [`DenseNet::shifted`].
pub fn peft_forward(net0: &DenseNet, map: &ReparamMap, phi: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let delta = map.apply(phi)?;
    if delta.len() != net0.param_count() || x.len() != net0.input_dim() {
        return Err(shape_err!("map or input does not fit the network"));
    }
    let mut a = x.to_vec();
    for (layer, slot) in net0.layers().iter().zip(net0.layout()) {
        let w = layer.weight.as_slice();
        let dw = &delta[slot.weight_range()];
        let mut z = Vec::with_capacity(slot.rows);
        for i in 0..slot.rows {
            let row = i * slot.cols..(i + 1) * slot.cols;
            let s: f64 = w[row.clone()].iter().zip(&dw[row]).zip(&a).map(|((w0, d), ai)| (w0 + d) * ai).sum();
            z.push(s);
        }
        if let (Some(b), Some(off)) = (&layer.bias, slot.bias_offset) {
            for (i, zi) in z.iter_mut().enumerate() {
                *zi += b[i] + delta[off + i];
            }
        }
        a = z.into_iter().map(|v| layer.activation.apply(v)).collect();
    }
    Ok(a)
}

/// Rank evidence for one map kind. Linear kinds report `rank(P)`; the
/// bilinear kind reports the Jacobian rank at a generic point, which
/// bounds the dimension of its image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KindCheck {
    pub kind: MapKind,
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    pub rank_of: String,
    pub min_residual: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SubspaceSuiteConfig {
    pub gaussian_d: usize,
    pub gaussian_k: usize,
    pub gaussian_samples: usize,
    pub kind_samples: usize,
    pub forward_instances: usize,
    pub nets: NetFamily,
    pub maps: MapFamily,
}

impl Default for SubspaceSuiteConfig {
    fn default() -> Self {
        Self {
            gaussian_d: 64,
            gaussian_k: 4,
            gaussian_samples: 10_000,
            kind_samples: 1000,
            forward_instances: 100,
            nets: NetFamily::default(),
            maps: MapFamily::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubspaceSuiteReport {
    pub kinds: Vec<KindCheck>,
    pub gaussian: SubspaceReport,
    pub forward_instances: usize,
    /// Instances whose two forward paths differ in any bit.
    pub forward_mismatches: usize,
}

impl SubspaceSuiteReport {
    pub fn passed(&self) -> bool {
        self.kinds.iter().all(|k| k.passed) && self.gaussian.passed && self.gaussian.min_residual > 0.5 && self.forward_mismatches == 0
    }
}

fn kind_check(map: &ReparamMap, samples: usize, seed: u64, r: &mut Rng) -> Result<KindCheck> {
    if map.is_linear() {
        let rep = verify_nonsurjectivity(map, samples, seed)?;
        return Ok(KindCheck {
            kind: rep.kind,
            d: rep.d,
            k: rep.k,
            rank: rep.projection_rank,
            rank_of: "projection".into(),
            min_residual: Some(rep.min_residual),
            passed: rep.passed,
        });
    }
    let phi = rng::gaussian_vec(r, map.k());
    let rank = numerical_rank(&map.jacobian(&phi)?, DEFAULT_RANK_TOL)?;
    Ok(KindCheck {
        kind: map.kind(),
        d: map.d(),
        k: map.k(),
        rank,
        rank_of: "jacobian".into(),
        min_residual: None,
        passed: rank <= map.k() && map.k() < map.d(),
    })
}

pub fn subspace_suite<R: TrialRunner>(cfg: &SubspaceSuiteConfig, seed: u64, runner: &R) -> Result<SubspaceSuiteReport> {
    cfg.nets.validate()?;
    cfg.maps.validate()?;
    if cfg.gaussian_k == 0 || cfg.gaussian_k >= cfg.gaussian_d {
        return Err(Error::ConfigInvalid("gaussian test needs 0 < k < d".into()));
    }
    let mut r = rng::stream(seed, 0, "subspace-kinds");
    let net = DenseNet::random(&[6, 5, 4], &[Activation::Relu, Activation::Identity], false, &mut r)?;
    let d = net.param_count();
    let maps = [
        ReparamMap::random_subspace(d, 4, &mut r)?,
        ReparamMap::bitfit(d, vec![0, 7, 13, d - 1])?,
        ReparamMap::lora_linear_random(&net, 0, 1, &mut r)?,
        ReparamMap::lora_bilinear(&net, 1, 1)?,
    ];
    let mut kinds = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        kinds.push(kind_check(m, cfg.kind_samples, rng::derive_seed(seed, i as u64, "subspace-kind"), &mut r)?);
    }
    let gmap = ReparamMap::random_subspace(cfg.gaussian_d, cfg.gaussian_k, &mut r)?;
    let gaussian = verify_nonsurjectivity(&gmap, cfg.gaussian_samples, rng::derive_seed(seed, 0, "subspace-gaussian"))?;
    let mismatches = runner.run(cfg.forward_instances, |t| -> Result<bool> {
        let mut r = rng::stream(seed, t as u64, "subset-forward");
        let net0 = cfg.nets.sample(&mut r)?;
        let map = cfg.maps.sample(&net0, &mut r)?;
        let phi = rng::gaussian_vec(&mut r, map.k());
        let x = rng::gaussian_vec(&mut r, net0.input_dim());
        let a = peft_forward(&net0, &map, &phi, &x)?;
        let b = net0.shifted(&map.apply(&phi)?)?.forward(&x)?;
        Ok(a.iter().zip(&b).any(|(p, q)| p.to_bits() != q.to_bits()))
    });
    let forward_mismatches = mismatches.into_iter().collect::<Result<Vec<_>>>()?.into_iter().filter(|m| *m).count();
    Ok(SubspaceSuiteReport { kinds, gaussian, forward_instances: cfg.forward_instances, forward_mismatches })
}

/// Ingredients of the capacity bound for one instance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapacityTerms {
    /// `max_k ‖W_{0,k}‖₂`.
    pub m: f64,
    /// `max_k L_k`.
    pub l: f64,
    /// `α_k = L‖Φ_k‖₂`, one per layer.
    pub alphas: Vec<f64>,
    /// `M^{N−k} L^{N−k} α_k ‖x‖`.
    pub terms: Vec<f64>,
    pub x_norm: f64,
    pub bound: f64,
}

/// `Σ_k M^{N−k} L^{N−k} α_k ‖x‖` for layers `k = 1..N`.
pub fn bound_from_alphas(m: f64, l: f64, alphas: &[f64], x_norm: f64) -> (Vec<f64>, f64) {
    let n = alphas.len();
    let terms: Vec<f64> = alphas
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let e = (n - 1 - i) as f64;
            libm::pow(m, e) * libm::pow(l, e) * a * x_norm
        })
        .collect();
    let bound = terms.iter().sum();
    (terms, bound)
}

/// Bound terms for a parameter shift `delta` of a bias-free net.
pub fn capacity_terms_for_delta(net0: &DenseNet, delta: &[f64], x: &[f64]) -> Result<CapacityTerms> {
    if !net0.is_bias_free() {
        return Err(Error::BiasedNet);
    }
    if x.len() != net0.input_dim() {
        return Err(shape_err!("input of {} for a net taking {}", x.len(), net0.input_dim()));
    }
    let mut m: f64 = 0.0;
    let mut l: f64 = 0.0;
    for layer in net0.layers() {
        m = m.max(layer.weight.op_norm()?);
        l = l.max(layer.activation.lipschitz_constant());
    }
    let mut alphas = Vec::with_capacity(net0.depth());
    for k in 0..net0.depth() {
        let block = net0.weight_block(delta, k)?;
        let nb = if block.as_slice().iter().all(|&v| v == 0.0) { 0.0 } else { block.op_norm()? };
        alphas.push(l * nb);
    }
    let x_norm = norm(x);
    let (terms, bound) = bound_from_alphas(m, l, &alphas, x_norm);
    Ok(CapacityTerms { m, l, alphas, terms, x_norm, bound })
}

pub fn capacity_terms(net0: &DenseNet, map: &ReparamMap, phi: &[f64], x: &[f64]) -> Result<CapacityTerms> {
    capacity_terms_for_delta(net0, &map.apply(phi)?, x)
}

pub fn capacity_upper_bound(net0: &DenseNet, map: &ReparamMap, phi: &[f64], x: &[f64]) -> Result<f64> {
    Ok(capacity_terms(net0, map, phi, x)?.bound)
}

/// Shape and scale ranges for random bias-free networks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetFamily {
    pub depth_min: usize,
    pub depth_max: usize,
    pub width_min: usize,
    pub width_max: usize,
    pub activations: Vec<Activation>,
    /// Range of the product `M·L` the weights are rescaled into.
    pub ml_min: f64,
    pub ml_max: f64,
}

impl Default for NetFamily {
    fn default() -> Self {
        Self {
            depth_min: 1,
            depth_max: 4,
            width_min: 2,
            width_max: 16,
            activations: vec![Activation::Relu, Activation::Tanh],
            ml_min: 0.5,
            ml_max: 2.5,
        }
    }
}

impl NetFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_min >= 1
            && self.depth_min <= self.depth_max
            && self.width_min >= 2
            && self.width_min <= self.width_max
            && !self.activations.is_empty()
            && self.ml_min > 0.0
            && self.ml_min <= self.ml_max
            && self.ml_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid("net family needs 1 <= depth, 2 <= width, non-empty activations and 0 < ml_min <= ml_max".into()))
        }
    }

    /// Draws a net, then rescales every layer so its operator norm lies in
    /// `[M/2, M]` with at least one layer at exactly `M`, where `M·L` is
    /// uniform in `[ml_min, ml_max]`.
    pub fn sample(&self, r: &mut Rng) -> Result<DenseNet> {
        let depth = rng::uniform_usize(r, self.depth_min, self.depth_max);
        let widths: Vec<usize> = (0..=depth).map(|_| rng::uniform_usize(r, self.width_min, self.width_max)).collect();
        let acts: Vec<Activation> =
            (0..depth).map(|_| self.activations[rng::uniform_usize(r, 0, self.activations.len() - 1)]).collect();
        let base = DenseNet::random(&widths, &acts, false, r)?;
        let l = acts.iter().map(|a| a.lipschitz_constant()).fold(0.0, f64::max);
        let m = rng::uniform(r, self.ml_min, self.ml_max) / l;
        let top = rng::uniform_usize(r, 0, depth - 1);
        let mut layers = Vec::with_capacity(depth);
        for (k, layer) in base.layers().iter().enumerate() {
            let share = if k == top { 1.0 } else { rng::uniform(r, 0.5, 1.0) };
            let s = m * share / layer.weight.op_norm()?;
            layers.push(Layer::new(layer.weight.scale(s), None, layer.activation)?);
        }
        DenseNet::new(layers)
    }
}

/// Map kinds and adapter magnitudes for random capacity trials.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MapFamily {
    pub kinds: Vec<MapKind>,
    pub max_k: usize,
    pub max_rank: usize,
    /// `‖Φ‖` is drawn uniformly from this range.
    pub phi_norm_min: f64,
    pub phi_norm_max: f64,
    /// Fraction of trials run at `Φ = 0`.
    pub zero_phi_fraction: f64,
}

impl Default for MapFamily {
    fn default() -> Self {
        Self {
            kinds: MapKind::ALL.to_vec(),
            max_k: 8,
            max_rank: 2,
            phi_norm_min: 0.01,
            phi_norm_max: 1.0,
            zero_phi_fraction: 0.05,
        }
    }
}

impl MapFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.kinds.is_empty()
            && self.max_k >= 1
            && self.max_rank >= 1
            && self.phi_norm_min >= 0.0
            && self.phi_norm_min <= self.phi_norm_max
            && (0.0..=1.0).contains(&self.zero_phi_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid("map family needs kinds, positive max_k and max_rank, ordered phi norms and a zero fraction in [0, 1]".into()))
        }
    }

    /// Draws a map of a random kind. Kinds that do not fit the sampled net
    /// (for instance bilinear LoRA whose `k` would reach `d`) fall back to BitFit.
    pub fn sample(&self, net: &DenseNet, r: &mut Rng) -> Result<ReparamMap> {
        let d = net.param_count();
        let kind = self.kinds[rng::uniform_usize(r, 0, self.kinds.len() - 1)];
        let layer = rng::uniform_usize(r, 0, net.depth() - 1);
        let attempt = match kind {
            MapKind::Subspace => {
                let k = rng::uniform_usize(r, 1, self.max_k.min(d - 1));
                ReparamMap::random_subspace(d, k, r)
            }
            MapKind::Bitfit => return self.bitfit(d, r),
            MapKind::LoraLinear => {
                let rows = net.layers()[layer].weight.rows();
                let rank = rng::uniform_usize(r, 1, self.max_rank.min(rows));
                ReparamMap::lora_linear_random(net, layer, rank, r)
            }
            MapKind::LoraBilinear => {
                let rank = rng::uniform_usize(r, 1, self.max_rank);
                ReparamMap::lora_bilinear(net, layer, rank)
            }
        };
        match attempt {
            Err(Error::ConfigInvalid(_)) => self.bitfit(d, r),
            other => other,
        }
    }

    fn bitfit(&self, d: usize, r: &mut Rng) -> Result<ReparamMap> {
        let k = rng::uniform_usize(r, 1, self.max_k.min(d - 1));
        ReparamMap::bitfit(d, index::sample(r, d, k).into_vec())
    }
}

/// A random instance whose deviation exceeded the bound.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CapacityCounterexample {
    pub trial: usize,
    pub net: DenseNet,
    pub map: ReparamMap,
    pub phi: Vec<f64>,
    pub x: Vec<f64>,
    pub deviation: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapacityTrial {
    pub trial: usize,
    pub depth: usize,
    pub d: usize,
    pub kind: MapKind,
    pub k: usize,
    pub m: f64,
    pub l: f64,
    pub alphas: Vec<f64>,
    pub deviation: f64,
    pub bound: f64,
    pub violated: bool,
}

impl CapacityTrial {
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.deviation / self.bound
        } else {
            0.0
        }
    }
}

/// Bound term each layer would receive for a unit adapter norm, and whether
/// later layers get no larger a term. That ordering holds exactly when
/// `M·L ≥ 1` and reverses otherwise.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSensitivity {
    pub trial: usize,
    pub ml: f64,
    pub expansive: bool,
    pub unit_terms: Vec<f64>,
    pub later_layers_no_larger: bool,
}

impl LayerSensitivity {
    pub fn of(trial: usize, terms: &CapacityTerms) -> Self {
        let unit = vec![1.0; terms.alphas.len()];
        let (unit_terms, _) = bound_from_alphas(terms.m, terms.l, &unit, 1.0);
        let later_layers_no_larger = unit_terms.windows(2).all(|w| w[1] <= w[0]);
        let ml = terms.m * terms.l;
        Self { trial, ml, expansive: ml >= 1.0, unit_terms, later_layers_no_larger }
    }

    /// The ordering claim that is forced by the formula.
    pub fn consistent(&self) -> bool {
        !self.expansive || self.later_layers_no_larger
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TightnessWitness {
    pub deviation: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Single relu layer `W₀ = I₂`, rank-1 LoRA `ΔW = 0.1·e₁e₁ᵀ`, `x = e₁`:
/// the adapter direction, the input and the active relu unit all align, so
/// every inequality in the bound is an equality.
pub fn tightness_witness() -> Result<TightnessWitness> {
    let net = DenseNet::new(vec![Layer::new(Matrix::identity(2), None, Activation::Relu)?])?;
    let b = Matrix::from_rows(&[&[1.0], &[0.0]])?;
    let map = ReparamMap::lora_linear(&net, 0, b)?;
    let phi = [0.1, 0.0];
    let x = [1.0, 0.0];
    let deviation = output_deviation(&net, &map, &phi, &x)?;
    let bound = capacity_upper_bound(&net, &map, &phi, &x)?;
    Ok(TightnessWitness { deviation, bound, ratio: deviation / bound })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CapacityBoundReport {
    pub trials: Vec<CapacityTrial>,
    pub sensitivity: Vec<LayerSensitivity>,
    pub violations: usize,
    pub max_ratio: f64,
    /// Multiplier applied to the bound before comparison; 1 unless a
    /// deliberately corrupted formula is being exercised.
    pub bound_scale: f64,
    pub counterexample: Option<CapacityCounterexample>,
    pub tightness: TightnessWitness,
}

impl CapacityBoundReport {
    pub fn sensitivity_consistent(&self) -> bool {
        self.sensitivity.iter().all(LayerSensitivity::consistent)
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.sensitivity_consistent() && (self.tightness.ratio - 1.0).abs() <= 1e-9
    }

    pub fn into_result(self) -> Result<Self> {
        match self.counterexample {
            Some(c) => Err(Error::BoundViolated(Box::new(c))),
            None => Ok(self),
        }
    }
}

struct TrialOutcome {
    record: CapacityTrial,
    sensitivity: LayerSensitivity,
    counterexample: Option<CapacityCounterexample>,
}

fn capacity_trial(
    nets: &NetFamily,
    maps: &MapFamily,
    seed: u64,
    trial: usize,
    bound_scale: f64,
) -> Result<TrialOutcome> {
    let mut r = rng::stream(seed, trial as u64, "capacity");
    let net = nets.sample(&mut r)?;
    let map = maps.sample(&net, &mut r)?;
    let mut phi = rng::gaussian_vec(&mut r, map.k());
    let target = rng::uniform(&mut r, maps.phi_norm_min, maps.phi_norm_max);
    let zero = rng::uniform(&mut r, 0.0, 1.0) < maps.zero_phi_fraction;
    let pn = norm(&phi);
    for v in &mut phi {
        *v = if zero { 0.0 } else { *v * target / pn };
    }
    let x = rng::gaussian_vec(&mut r, net.input_dim());
    let deviation = output_deviation(&net, &map, &phi, &x)?;
    let terms = capacity_terms(&net, &map, &phi, &x)?;
    let bound = terms.bound * bound_scale;
    let violated = deviation > bound + BOUND_SLACK * (1.0 + bound);
    let record = CapacityTrial {
        trial,
        depth: net.depth(),
        d: net.param_count(),
        kind: map.kind(),
        k: map.k(),
        m: terms.m,
        l: terms.l,
        alphas: terms.alphas.clone(),
        deviation,
        bound,
        violated,
    };
    let sensitivity = LayerSensitivity::of(trial, &terms);
    let counterexample = violated.then(|| CapacityCounterexample { trial, net, map, phi, x, deviation, bound });
    Ok(TrialOutcome { record, sensitivity, counterexample })
}

/// Runs every trial and reports; never errors on a violation.
pub fn capacity_suite<R: TrialRunner>(
    nets: &NetFamily,
    maps: &MapFamily,
    n_trials: usize,
    seed: u64,
    bound_scale: f64,
    runner: &R,
) -> Result<CapacityBoundReport> {
    nets.validate()?;
    maps.validate()?;
    if !(bound_scale > 0.0 && bound_scale.is_finite()) {
        return Err(Error::ConfigInvalid("bound_scale must be positive".into()));
    }
    let outcomes = runner.run(n_trials, |t| capacity_trial(nets, maps, seed, t, bound_scale));
    let mut trials = Vec::with_capacity(n_trials);
    let mut sensitivity = Vec::with_capacity(n_trials);
    let mut counterexample = None;
    for o in outcomes {
        let o = o?;
        if counterexample.is_none() {
            counterexample = o.counterexample;
        }
        trials.push(o.record);
        sensitivity.push(o.sensitivity);
    }
    let violations = trials.iter().filter(|t| t.violated).count();
    let max_ratio = trials.iter().map(CapacityTrial::ratio).fold(0.0, f64::max);
    Ok(CapacityBoundReport {
        trials,
        sensitivity,
        violations,
        max_ratio,
        bound_scale,
        counterexample,
        tightness: tightness_witness()?,
    })
}

/// As [`capacity_suite`] with the true bound, failing with the first
/// counterexample if any trial violates it.
pub fn verify_capacity<R: TrialRunner>(
    nets: &NetFamily,
    maps: &MapFamily,
    n_trials: usize,
    seed: u64,
    runner: &R,
) -> Result<CapacityBoundReport> {
    capacity_suite(nets, maps, n_trials, seed, 1.0, runner)?.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::Sequential;

    #[test]
    fn subspace_suite_passes() {
        let cfg = SubspaceSuiteConfig { gaussian_samples: 500, kind_samples: 50, forward_instances: 20, ..Default::default() };
        let rep = subspace_suite(&cfg, 3, &Sequential).unwrap();
        assert!(rep.passed(), "{:?}", rep.kinds);
        assert_eq!(rep.kinds.len(), MapKind::ALL.len());
        let bil = rep.kinds.iter().find(|k| k.kind == MapKind::LoraBilinear).unwrap();
        assert_eq!(bil.rank, bil.k - 1);
    }

    #[test]
    fn residual_examples() {
        let map = ReparamMap::subspace(Matrix::from_rows(&[&[1.0], &[0.0], &[0.0]]).unwrap()).unwrap();
        let q = map.orthonormal_basis().unwrap();
        assert_eq!(relative_residual(&q, &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!(relative_residual(&q, &[2.5, 0.0, 0.0]).unwrap() < 1e-12);
    }

    #[test]
    fn gaussian_residuals_stay_large() {
        let mut r = rng::from_seed(64);
        let map = ReparamMap::random_subspace(64, 4, &mut r).unwrap();
        let rep = verify_nonsurjectivity(&map, 10_000, 1).unwrap();
        assert_eq!(rep.projection_rank, 4);
        assert!(rep.min_residual > 0.5, "{}", rep.min_residual);
        assert!(rep.passed);
        assert!(rep.residual_samples.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deviation_examples() {
        let net = DenseNet::new(vec![Layer::new(Matrix::identity(2), None, Activation::Identity).unwrap()]).unwrap();
        let map = ReparamMap::bitfit(4, vec![0, 3]).unwrap();
        assert_eq!(output_deviation(&net, &map, &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let dev = output_deviation(&net, &map, &[0.1, 0.1], &[1.0, 0.0]).unwrap();
        assert!((dev - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bound_formula_examples() {
        let (_, b) = bound_from_alphas(2.0, 1.0, &[0.1, 0.1, 0.1], 1.0);
        assert!((b - 0.7).abs() < 1e-15);
        let w = tightness_witness().unwrap();
        assert!((w.bound - 0.1).abs() < 1e-15);
        assert!((w.ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn biased_nets_rejected() {
        let mut r = rng::from_seed(3);
        let net = DenseNet::random(&[2, 2], &[Activation::Relu], true, &mut r).unwrap();
        let map = ReparamMap::bitfit(net.param_count(), vec![0]).unwrap();
        assert_eq!(capacity_upper_bound(&net, &map, &[0.1], &[1.0, 1.0]), Err(Error::BiasedNet));
    }

    #[test]
    fn sampled_nets_respect_scale_range() {
        let fam = NetFamily::default();
        let mut r = rng::from_seed(10);
        for _ in 0..50 {
            let net = fam.sample(&mut r).unwrap();
            let terms = capacity_terms_for_delta(&net, &vec![0.0; net.param_count()], &vec![1.0; net.input_dim()]).unwrap();
            let ml = terms.m * terms.l;
            assert!((0.5 - 1e-12..=2.5 + 1e-12).contains(&ml), "{ml}");
            assert_eq!(terms.bound, 0.0);
        }
    }

    #[test]
    fn corrupted_bound_is_caught() {
        let rep = capacity_suite(&NetFamily::default(), &MapFamily::default(), 50, 7, 1e-3, &Sequential).unwrap();
        assert!(rep.violations > 0);
        let c = rep.counterexample.clone().unwrap();
        assert!(c.deviation > c.bound);
        assert!(matches!(rep.into_result(), Err(Error::BoundViolated(_))));
    }

    #[test]
    fn amplifying_prefix_exceeds_stated_bound() {
        // Two linear layers, the first doubling its input; perturbing only
        // the second layer sees ‖x¹‖ = 2‖x‖, which the formula does not track.
        let net = DenseNet::new(vec![
            Layer::new(Matrix::identity(2).scale(2.0), None, Activation::Identity).unwrap(),
            Layer::new(Matrix::identity(2), None, Activation::Identity).unwrap(),
        ])
        .unwrap();
        let map = ReparamMap::bitfit(8, vec![4]).unwrap();
        let x = [1.0, 0.0];
        let dev = output_deviation(&net, &map, &[0.1], &x).unwrap();
        let bound = capacity_upper_bound(&net, &map, &[0.1], &x).unwrap();
        assert!((dev - 0.2).abs() < 1e-15);
        assert!((bound - 0.1).abs() < 1e-15);
    }
}
