//! Loss response to a parameter-space disturbance `ε` under the quadratic
//! model, for unconstrained and subspace-constrained updates, and a
//! trained-model robustness experiment under input noise.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::netcore::{self, Activation, DenseNet, HessianBundle, LossKind, NetObjective, Objective, Sample};
use crate::numerics::{cholesky, cholesky_solve, dot, norm, pinv, sym_eigen, Matrix, DEFAULT_RANK_TOL};
use crate::reparam::{decompose_with_basis, random_orthonormal, MapKind, PerturbationDecomposition, ReparamMap};
use crate::rng::{self, Rng};
use crate::runner::TrialRunner;
use crate::scaling::{self, generate_task, Method, StudentConfig, TaskConfig, TaskKind, Training};
use crate::stats::MeanCi;
use crate::trainer::OptimizerConfig;

/// Smallest Hessian eigenvalue accepted as positive definite.
pub const PD_FLOOR: f64 = 1e-10;
pub const GAP_SLACK: f64 = 1e-10;
pub const PSD_SLACK: f64 = 1e-9;

fn check_len(what: &str, v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(shape_err!("{} of length {} for d = {}", what, v.len(), d));
    }
    Ok(())
}

/// Cholesky factor of `h` after checking `λ_min(h) > pd_floor`.
fn pd_factor(h: &Matrix, pd_floor: f64) -> Result<Matrix> {
    let min = sym_eigen(h)?.min();
    if !(min > pd_floor) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    cholesky(h)
}

/// `vᵀ H⁻¹ v` through a Cholesky factor.
fn inv_quad(l: &Matrix, v: &[f64]) -> Result<f64> {
    Ok(dot(v, &cholesky_solve(l, v)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FftDelta {
    /// `½ εᵀH⁻¹ε`.
    pub focused: f64,
    /// `½ (∇L + ε)ᵀH⁻¹(∇L + ε)`.
    pub unfocused: f64,
}

pub fn fft_loss_delta_parts(hess: &Matrix, eps: &[f64], grad: &[f64]) -> Result<FftDelta> {
    check_len("perturbation", eps, hess.rows())?;
    check_len("gradient", grad, hess.rows())?;
    let l = pd_factor(hess, PD_FLOOR)?;
    let b: Vec<f64> = grad.iter().zip(eps).map(|(g, e)| g + e).collect();
    Ok(FftDelta { focused: 0.5 * inv_quad(&l, eps)?, unfocused: 0.5 * inv_quad(&l, &b)? })
}

pub fn fft_loss_delta(h: &HessianBundle, eps: &[f64]) -> Result<FftDelta> {
    fft_loss_delta_parts(&h.hessian, eps, &h.gradient)
}

/// `½ (Qᵀε)ᵀ (QᵀHQ)⁺ (Qᵀε) + ε⊥ᵀ∇L` for an orthonormal basis `Q`.
pub fn peft_loss_delta_q(hess: &Matrix, q: &Matrix, eps: &[f64], grad: &[f64]) -> Result<f64> {
    check_len("perturbation", eps, hess.rows())?;
    check_len("gradient", grad, hess.rows())?;
    let h_phi = q.t_matmul(&hess.matmul(q)?)?.symmetrized();
    let c = q.t_matvec(eps)?;
    let quad = dot(&c, &pinv(&h_phi, DEFAULT_RANK_TOL)?.matvec(&c)?);
    let dec = decompose_with_basis(q, eps)?;
    Ok(0.5 * quad + dot(&dec.eps_perp, grad))
}

pub fn peft_loss_delta(h: &HessianBundle, map: &ReparamMap, eps: &[f64], grad: &[f64]) -> Result<f64> {
    peft_loss_delta_q(&h.hessian, &map.orthonormal_basis()?, eps, grad)
}

/// Minima of `m(Δ) = (∇L + ε)ᵀΔ + ½ΔᵀHΔ` over `R^d` and over `span(Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubspaceGap {
    pub unconstrained_min: f64,
    pub constrained_min: f64,
    /// `constrained_min − unconstrained_min`.
    pub gap: f64,
}

pub fn subspace_gap_q(hess: &Matrix, q: &Matrix, eps: &[f64], grad: &[f64]) -> Result<SubspaceGap> {
    check_len("perturbation", eps, hess.rows())?;
    check_len("gradient", grad, hess.rows())?;
    let l = pd_factor(hess, PD_FLOOR)?;
    let b: Vec<f64> = grad.iter().zip(eps).map(|(g, e)| g + e).collect();
    let unconstrained_min = -0.5 * inv_quad(&l, &b)?;
    let h_phi = q.t_matmul(&hess.matmul(q)?)?.symmetrized();
    let c = q.t_matvec(&b)?;
    let constrained_min = -0.5 * inv_quad(&cholesky(&h_phi)?, &c)?;
    Ok(SubspaceGap { unconstrained_min, constrained_min, gap: constrained_min - unconstrained_min })
}

pub fn subspace_adaptation_gap(h: &HessianBundle, map: &ReparamMap, eps: &[f64], grad: &[f64]) -> Result<SubspaceGap> {
    subspace_gap_q(&h.hessian, &map.orthonormal_basis()?, eps, grad)
}

/// `λ_min(QᵀH⁻¹Q − (QᵀHQ)⁻¹)`; non-negative for PD `H` and orthonormal `Q`.
pub fn psd_ordering_min_eig(hess: &Matrix, q: &Matrix) -> Result<f64> {
    let l = pd_factor(hess, PD_FLOOR)?;
    let k = q.cols();
    let mut hinv_q = Matrix::zeros(hess.rows(), k);
    for j in 0..k {
        let col = cholesky_solve(&l, &q.column(j))?;
        for (i, v) in col.into_iter().enumerate() {
            hinv_q[(i, j)] = v;
        }
    }
    let a = q.t_matmul(&hinv_q)?.symmetrized();
    let h_phi = q.t_matmul(&hess.matmul(q)?)?.symmetrized();
    let b = crate::numerics::spd_inverse(&h_phi)?;
    Ok(sym_eigen(&a.sub(&b)?)?.min())
}

/// Everything computed for one (H, map, ε) instance. The headline
/// difference `ΔL_peft − ΔL_full` and the intermediate quantities of its
/// algebraic expansion are recorded as measured values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbReport {
    pub h: HessianBundle,
    pub map_kind: MapKind,
    pub k: usize,
    pub decomposition: PerturbationDecomposition,
    /// `λ` added to the Hessian diagonal to reach the positive-definite floor.
    pub regularization: f64,
    pub delta_l_full: FftDelta,
    pub delta_l_peft: f64,
    pub subspace: SubspaceGap,
    pub psd_ordering_min_eig: f64,
    /// `ΔL_peft − ΔL_full` with the focused full-space term.
    pub headline_difference: f64,
    /// `½((Qᵀε)ᵀH_Φ⁺(Qᵀε) − ε_parᵀH⁻¹ε_par)`.
    pub parallel_excess: f64,
    /// `ε_parᵀH⁻¹ε_perp`; vanishes only when `H` preserves the split.
    pub cross_term: f64,
    /// `ε_perpᵀ∇L − ½ε_perpᵀH⁻¹ε_perp`.
    pub perpendicular_term: f64,
    /// `½(2∇LᵀHε_perp − ε_perpᵀH⁻¹ε_perp)`, the rewritten perpendicular form.
    pub perpendicular_rewritten: f64,
    /// `|predicted − actual|` loss change along `ε`, when a network is at hand.
    pub taylor_residual: Option<f64>,
    /// Convention: H_Φ⁺ acts on `Qᵀε` with orthonormal `Q`.
    pub convention: String,
}

pub fn perturb_report(h: &HessianBundle, map: &ReparamMap, eps: &[f64], pd_floor: f64) -> Result<PerturbReport> {
    let (h, regularization) = h.regularized(pd_floor)?;
    let q = map.orthonormal_basis()?;
    let grad = h.gradient.clone();
    let dec = decompose_with_basis(&q, eps)?;
    let l = pd_factor(&h.hessian, PD_FLOOR)?;
    let delta_l_full = fft_loss_delta(&h, eps)?;
    let delta_l_peft = peft_loss_delta_q(&h.hessian, &q, eps, &grad)?;
    let subspace = subspace_gap_q(&h.hessian, &q, eps, &grad)?;
    let h_phi = q.t_matmul(&h.hessian.matmul(&q)?)?.symmetrized();
    let c = q.t_matvec(eps)?;
    let quad_phi = dot(&c, &pinv(&h_phi, DEFAULT_RANK_TOL)?.matvec(&c)?);
    let par_inv = inv_quad(&l, &dec.eps_par)?;
    let perp_inv = inv_quad(&l, &dec.eps_perp)?;
    let cross_term = dot(&dec.eps_par, &cholesky_solve(&l, &dec.eps_perp)?);
    let h_perp = h.hessian.matvec(&dec.eps_perp)?;
    Ok(PerturbReport {
        map_kind: map.kind(),
        k: map.k(),
        regularization,
        headline_difference: delta_l_peft - delta_l_full.focused,
        parallel_excess: 0.5 * (quad_phi - par_inv),
        cross_term,
        perpendicular_term: dot(&dec.eps_perp, &grad) - 0.5 * perp_inv,
        perpendicular_rewritten: 0.5 * (2.0 * dot(&grad, &h_perp) - perp_inv),
        psd_ordering_min_eig: psd_ordering_min_eig(&h.hessian, &q)?,
        taylor_residual: None,
        delta_l_full,
        delta_l_peft,
        subspace,
        decomposition: dec,
        convention: "H_phi^+ applied to Q^T eps with Q = orthonormalize(P)".into(),
        h,
    })
}

/// `|L(θ+s) − (L(θ) + ∇Lᵀs + ½sᵀHs)|`.
pub fn taylor_residual<O: Objective + ?Sized>(obj: &O, theta: &[f64], step: &[f64]) -> Result<f64> {
    check_len("step", step, obj.dim())?;
    let (l0, g) = obj.value_and_gradient(theta)?;
    let hs = obj.hessian(theta)?.matvec(step)?;
    let moved: Vec<f64> = theta.iter().zip(step).map(|(a, b)| a + b).collect();
    let l1 = obj.value(&moved)?;
    let r = (l1 - (l0 + dot(&g, step) + 0.5 * dot(step, &hs))).abs();
    if !r.is_finite() {
        return Err(Error::NonFinite("taylor residual"));
    }
    Ok(r)
}

pub fn taylor_consistency(net: &DenseNet, loss: LossKind, batch: &[Sample], step: &[f64]) -> Result<f64> {
    taylor_residual(&NetObjective::new(net, loss, batch), &net.params(), step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaylorScaling {
    pub step_large: f64,
    pub step_small: f64,
    pub residual_large: f64,
    pub residual_small: f64,
    /// `log(r_large / r_small) / log(step_large / step_small)`.
    pub exponent: f64,
}

pub fn taylor_scaling<O: Objective + ?Sized>(obj: &O, theta: &[f64], direction: &[f64], large: f64, small: f64) -> Result<TaylorScaling> {
    let n = norm(direction);
    if n == 0.0 || !(large > small && small > 0.0) {
        return Err(Error::ConfigInvalid("taylor scaling needs a nonzero direction and 0 < small < large".into()));
    }
    let at = |s: f64| taylor_residual(obj, theta, &direction.iter().map(|v| v * s / n).collect::<Vec<_>>());
    let (rl, rs) = (at(large)?, at(small)?);
    if rs == 0.0 || rl == 0.0 {
        return Err(Error::DegenerateFit("taylor residual vanished".into()));
    }
    Ok(TaylorScaling {
        step_large: large,
        step_small: small,
        residual_large: rl,
        residual_small: rs,
        exponent: libm::log(rl / rs) / libm::log(large / small),
    })
}

/// Random positive-definite Hessians with log-uniform spectra, Gaussian
/// (not orthonormal) bases, disturbances and gradients.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct InstanceFamily {
    pub d_min: usize,
    pub d_max: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    pub grad_scale: f64,
}

impl Default for InstanceFamily {
    fn default() -> Self {
        Self { d_min: 2, d_max: 12, eig_min: 1e-2, eig_max: 1e2, grad_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadInstance {
    pub hessian: Matrix,
    pub p: Matrix,
    pub eps: Vec<f64>,
    pub grad: Vec<f64>,
}

impl InstanceFamily {
    pub fn validate(&self) -> Result<()> {
        if self.d_min < 2 || self.d_min > self.d_max || !(self.eig_min > 0.0 && self.eig_min <= self.eig_max) || !(self.grad_scale >= 0.0) {
            return Err(Error::ConfigInvalid("instance family needs 2 <= d_min <= d_max and 0 < eig_min <= eig_max".into()));
        }
        Ok(())
    }

    pub fn sample(&self, r: &mut Rng) -> Result<QuadInstance> {
        let d = rng::uniform_usize(r, self.d_min, self.d_max);
        let k = rng::uniform_usize(r, 1, d - 1);
        let u = random_orthonormal(d, d, r)?;
        let (lo, hi) = (libm::log(self.eig_min), libm::log(self.eig_max));
        let lambdas: Vec<f64> = (0..d).map(|_| libm::exp(rng::uniform(r, lo, hi))).collect();
        let hessian = Matrix::from_fn(d, d, |i, j| (0..d).map(|m| u[(i, m)] * lambdas[m] * u[(j, m)]).sum()).symmetrized();
        let p = Matrix::from_vec(d, k, rng::gaussian_vec(r, d * k))?;
        let eps = rng::gaussian_vec(r, d);
        let grad = rng::gaussian_vec(r, d).into_iter().map(|v| v * self.grad_scale).collect();
        Ok(QuadInstance { hessian, p, eps, grad })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstanceCheck {
    pub trial: usize,
    pub d: usize,
    pub k: usize,
    pub gap: f64,
    pub psd_min_eig: f64,
    pub headline_difference: f64,
    /// Largest disagreement between the PEFT formulas with a full-space
    /// basis and their full-space counterparts.
    pub degeneration_error: f64,
}

pub fn check_instance(inst: &QuadInstance, trial: usize, r: &mut Rng) -> Result<InstanceCheck> {
    let d = inst.hessian.rows();
    let map = ReparamMap::subspace(inst.p.clone())?;
    let q = map.orthonormal_basis()?;
    let gap = subspace_gap_q(&inst.hessian, &q, &inst.eps, &inst.grad)?;
    let psd = psd_ordering_min_eig(&inst.hessian, &q)?;
    let peft = peft_loss_delta_q(&inst.hessian, &q, &inst.eps, &inst.grad)?;
    let full = fft_loss_delta_parts(&inst.hessian, &inst.eps, &inst.grad)?;
    let qf = random_orthonormal(d, d, r)?;
    let peft_full = peft_loss_delta_q(&inst.hessian, &qf, &inst.eps, &inst.grad)?;
    let gap_full = subspace_gap_q(&inst.hessian, &qf, &inst.eps, &inst.grad)?;
    let degeneration_error = ((peft_full - full.focused).abs() / (1.0 + full.focused.abs()))
        .max(gap_full.gap.abs() / (1.0 + gap_full.unconstrained_min.abs()));
    Ok(InstanceCheck {
        trial,
        d,
        k: map.k(),
        gap: gap.gap,
        psd_min_eig: psd,
        headline_difference: peft - full.focused,
        degeneration_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorkedInstance {
    pub delta_l_full: f64,
    pub delta_l_peft: f64,
    pub unconstrained_min: f64,
    pub constrained_min: f64,
    pub gap: f64,
}

/// `H = diag(1, 4)`, `Q = e₁`, `ε = (1, 1)`, `∇L = 0`.
pub fn worked_instance() -> Result<WorkedInstance> {
    let h = Matrix::diag(&[1.0, 4.0]);
    let q = Matrix::from_rows(&[&[1.0], &[0.0]])?;
    let eps = [1.0, 1.0];
    let grad = [0.0, 0.0];
    let full = fft_loss_delta_parts(&h, &eps, &grad)?;
    let g = subspace_gap_q(&h, &q, &eps, &grad)?;
    Ok(WorkedInstance {
        delta_l_full: full.focused,
        delta_l_peft: peft_loss_delta_q(&h, &q, &eps, &grad)?,
        unconstrained_min: g.unconstrained_min,
        constrained_min: g.constrained_min,
        gap: g.gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PerturbationConfig {
    pub n_instances: usize,
    pub instances: InstanceFamily,
    pub n_taylor_nets: usize,
    pub taylor_step_large: f64,
    pub taylor_step_small: f64,
    pub exponent_band: (f64, f64),
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n_instances: 1000,
            instances: InstanceFamily::default(),
            n_taylor_nets: 10,
            taylor_step_large: 1e-2,
            taylor_step_small: 5e-3,
            exponent_band: (2.5, 3.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationReport {
    pub instances: Vec<InstanceCheck>,
    pub min_gap: f64,
    pub gap_violations: usize,
    pub min_psd_eig: f64,
    pub psd_violations: usize,
    pub max_degeneration_error: f64,
    /// Instances where `ΔL_peft − ΔL_full > 0`; measured, not asserted.
    pub headline_positive: usize,
    pub worked: WorkedInstance,
    pub taylor: Vec<TaylorScaling>,
    pub taylor_in_band: bool,
    /// Residual of the quadratic model on a quadratic probe.
    pub quadratic_probe_residual: f64,
    /// A full report on a small tanh network with a rank-1 LoRA map.
    pub net_example: PerturbReport,
}

impl PerturbationReport {
    pub fn passed(&self) -> bool {
        let w = &self.worked;
        self.gap_violations == 0
            && self.psd_violations == 0
            && self.max_degeneration_error <= 1e-10
            && self.taylor_in_band
            && self.quadratic_probe_residual < 1e-12
            && (w.delta_l_full - 0.625).abs() <= 1e-12
            && (w.delta_l_peft - 0.5).abs() <= 1e-12
            && (w.gap - 0.125).abs() <= 1e-12
    }
}

fn tanh_instance(r: &mut Rng) -> Result<(DenseNet, Vec<Sample>)> {
    let net = DenseNet::random(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], true, r)?;
    let batch = (0..8).map(|_| Sample::new(rng::gaussian_vec(r, 3), rng::gaussian_vec(r, 2))).collect();
    Ok((net, batch))
}

/// A small tanh net fitted to a noisy teacher with more residuals than
/// parameters, so the Hessian at the fitted point is positive definite.
fn trained_instance(r: &mut Rng) -> Result<(DenseNet, Vec<Sample>)> {
    let acts = [Activation::Tanh, Activation::Identity];
    let teacher = DenseNet::random(&[2, 3, 1], &acts, false, r)?;
    let batch: Vec<Sample> = (0..32)
        .map(|_| {
            let x = rng::gaussian_vec(r, 2);
            let y = teacher.forward(&x)?.into_iter().map(|v| v + 0.1 * rng::gaussian(r)).collect();
            Ok(Sample::new(x, y))
        })
        .collect::<Result<_>>()?;
    let start = DenseNet::random(&[2, 3, 1], &acts, false, r)?;
    let obj = NetObjective::new(&start, LossKind::SquaredError, &batch);
    let opt = OptimizerConfig::gd(0.05, 20_000).with_grad_tol(1e-8);
    let trace = crate::trainer::minimize(&obj, &start.params(), &opt)?;
    Ok((start.with_params(&trace.params)?, batch))
}

pub fn verify_perturbation<R: TrialRunner>(cfg: &PerturbationConfig, seed: u64, runner: &R) -> Result<PerturbationReport> {
    cfg.instances.validate()?;
    let instances: Vec<InstanceCheck> = runner
        .run(cfg.n_instances, |t| {
            let mut r = rng::stream(seed, t as u64, "perturbation-instance");
            let inst = cfg.instances.sample(&mut r)?;
            check_instance(&inst, t, &mut r)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let taylor: Vec<TaylorScaling> = runner
        .run(cfg.n_taylor_nets, |t| {
            let mut r = rng::stream(seed, t as u64, "perturbation-taylor");
            let (net, batch) = tanh_instance(&mut r)?;
            let obj = NetObjective::new(&net, LossKind::SquaredError, &batch);
            let dir = rng::gaussian_vec(&mut r, net.param_count());
            taylor_scaling(&obj, &net.params(), &dir, cfg.taylor_step_large, cfg.taylor_step_small)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let (lo, hi) = cfg.exponent_band;
    let mut r = rng::stream(seed, 0, "perturbation-probe");
    let probe_h = {
        let a = Matrix::from_vec(5, 5, rng::gaussian_vec(&mut r, 25))?;
        a.t_matmul(&a)?
    };
    let probe = netcore::QuadraticProbe::new(probe_h, rng::gaussian_vec(&mut r, 5), 0.3)?;
    let quadratic_probe_residual = taylor_residual(&probe, &rng::gaussian_vec(&mut r, 5), &rng::gaussian_vec(&mut r, 5))?;

    let (net, batch) = trained_instance(&mut r)?;
    let bundle = netcore::hessian(&net, LossKind::SquaredError, &batch)?;
    let map = ReparamMap::lora_linear_random(&net, 0, 1, &mut r)?;
    let eps: Vec<f64> = rng::gaussian_vec(&mut r, net.param_count()).into_iter().map(|v| 0.1 * v).collect();
    let mut net_example = perturb_report(&bundle, &map, &eps, PD_FLOOR)?;
    net_example.taylor_residual = Some(taylor_consistency(&net, LossKind::SquaredError, &batch, &eps)?);

    Ok(PerturbationReport {
        min_gap: instances.iter().map(|c| c.gap).fold(f64::INFINITY, f64::min),
        gap_violations: instances.iter().filter(|c| c.gap < -GAP_SLACK).count(),
        min_psd_eig: instances.iter().map(|c| c.psd_min_eig).fold(f64::INFINITY, f64::min),
        psd_violations: instances.iter().filter(|c| c.psd_min_eig < -PSD_SLACK).count(),
        max_degeneration_error: instances.iter().map(|c| c.degeneration_error).fold(0.0, f64::max),
        headline_positive: instances.iter().filter(|c| c.headline_difference > 0.0).count(),
        worked: worked_instance()?,
        taylor_in_band: taylor.iter().all(|t| (lo..=hi).contains(&t.exponent)),
        taylor,
        quadratic_probe_residual,
        net_example,
        instances,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RobustnessConfig {
    pub task: TaskConfig,
    pub student: StudentConfig,
    pub methods: Vec<Method>,
    pub noise_scales: Vec<f64>,
    pub trials: usize,
    pub n_train: usize,
    pub training: Training,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        use crate::reparam::MapSpec;
        let task = TaskConfig {
            kind: TaskKind::Classification,
            input_dim: 16,
            output_dim: 4,
            teacher_hidden: Vec::new(),
            teacher_activation: Activation::Identity,
            noise_std: 0.1,
            pool_size: 2000,
            test_size: 2000,
            seed: 11,
        };
        let student = StudentConfig { hidden: vec![8], activation: Activation::Tanh, bias: false, seed: 5 };
        Self {
            task,
            student,
            methods: vec![
                Method::Fft,
                Method::Peft { map: MapSpec::LoraLinear { layer: 0, rank: 1, seed: 3 } },
                Method::Peft { map: MapSpec::Subspace { k: 16 * 8 + 8 * 4, seed: 4 } },
            ],
            noise_scales: vec![0.0, 0.25, 0.5, 1.0],
            trials: 30,
            n_train: 200,
            training: Training::Fixed { optimizer: OptimizerConfig::gd(0.5, 300) },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessRow {
    pub method: String,
    pub noise_scale: f64,
    pub trial: usize,
    pub clean: f64,
    pub perturbed: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessResult {
    pub method: String,
    pub k: usize,
    pub noise_scale: f64,
    pub clean_metric: MeanCi,
    pub perturbed_metric: MeanCi,
    pub degradation: MeanCi,
    /// Paired CI of this method's degradation minus FFT's.
    pub vs_fft: Option<MeanCi>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    pub results: Vec<RobustnessResult>,
}

fn noisy(data: &[Sample], scale: f64, r: &mut Rng) -> Vec<Sample> {
    data.iter()
        .map(|s| Sample::new(s.x.iter().map(|v| v + scale * rng::gaussian(r)).collect(), s.y.clone()))
        .collect()
}

/// Trains FFT and every PEFT method on the same data per trial and measures
/// test accuracy under Gaussian input noise. Noise draws depend only on
/// `(seed, trial, scale index)`, so methods see identical perturbations.
pub fn robustness_experiment<R: TrialRunner>(cfg: &RobustnessConfig, seed: u64, runner: &R) -> Result<RobustnessReport> {
    if cfg.task.kind != TaskKind::Classification {
        return Err(Error::ConfigInvalid("robustness experiment needs a classification task".into()));
    }
    if cfg.methods.is_empty() || cfg.trials == 0 || cfg.n_train == 0 || cfg.n_train > cfg.task.pool_size {
        return Err(Error::ConfigInvalid("robustness needs methods, trials, and 0 < n_train <= pool_size".into()));
    }
    if cfg.noise_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::ConfigInvalid("noise scales must be finite and non-negative".into()));
    }
    let task = generate_task(&cfg.task)?;
    let loss = task.loss();
    type TrialOut = Result<Vec<Option<(usize, Vec<(f64, f64)>)>>>;
    let per_trial: Vec<TrialOut> = runner.run(cfg.trials, |t| {
        let mut r = rng::stream(seed, t as u64, "robust-subset");
        let data: Vec<Sample> = rand::seq::index::sample(&mut r, task.train_pool.len(), cfg.n_train)
            .into_iter()
            .map(|i| task.train_pool[i].clone())
            .collect();
        let student = StudentConfig { seed: rng::derive_seed(cfg.student.seed, t as u64, "robust-student"), ..cfg.student.clone() };
        let net0 = student.build(task.input_dim(), task.output_dim())?;
        let perturbed_sets: Vec<Vec<Sample>> = cfg
            .noise_scales
            .iter()
            .enumerate()
            .map(|(si, &s)| noisy(&task.test, s, &mut rng::stream(seed, (t * cfg.noise_scales.len() + si) as u64, "robust-noise")))
            .collect();
        let mut out = Vec::with_capacity(cfg.methods.len());
        for m in &cfg.methods {
            let map = match m {
                Method::Fft => None,
                Method::Peft { map } => Some(map.build(&net0)?),
            };
            let k = map.as_ref().map_or(net0.param_count(), |m| m.k());
            let fitted = match scaling::fit(&net0, map.as_ref(), loss, &data, &cfg.training, rng::derive_seed(seed, t as u64, "robust-init")) {
                Ok(f) if f.converged => f,
                Ok(_) | Err(Error::NotConverged { .. }) | Err(Error::Diverged { .. }) => {
                    out.push(None);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let clean = scaling::accuracy(&fitted.net, &task.test)?;
            let mut metrics = Vec::with_capacity(perturbed_sets.len());
            for (set, &s) in perturbed_sets.iter().zip(&cfg.noise_scales) {
                let p = if s == 0.0 { clean } else { scaling::accuracy(&fitted.net, set)? };
                metrics.push((clean, p));
            }
            out.push(Some((k, metrics)));
        }
        Ok(out)
    });
    let per_trial: Vec<Vec<Option<(usize, Vec<(f64, f64)>)>>> = per_trial.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut results = Vec::new();
    let fft_index = cfg.methods.iter().position(|m| *m == Method::Fft);
    for (mi, m) in cfg.methods.iter().enumerate() {
        let label = m.label();
        for (si, &scale) in cfg.noise_scales.iter().enumerate() {
            let (mut clean, mut pert, mut deg) = (Vec::new(), Vec::new(), Vec::new());
            let (mut mine, mut base) = (Vec::new(), Vec::new());
            let mut excluded = 0;
            let mut k = 0;
            for (t, trial) in per_trial.iter().enumerate() {
                let Some((kk, metrics)) = &trial[mi] else {
                    excluded += 1;
                    continue;
                };
                k = *kk;
                let (c, p) = metrics[si];
                rows.push(RobustnessRow { method: label.clone(), noise_scale: scale, trial: t, clean: c, perturbed: p, degradation: c - p });
                clean.push(c);
                pert.push(p);
                deg.push(c - p);
                if let Some(fi) = fft_index {
                    if let Some((_, fm)) = &trial[fi] {
                        mine.push(c - p);
                        base.push(fm[si].0 - fm[si].1);
                    }
                }
            }
            results.push(RobustnessResult {
                method: label.clone(),
                k,
                noise_scale: scale,
                clean_metric: MeanCi::of(&clean),
                perturbed_metric: MeanCi::of(&pert),
                degradation: MeanCi::of(&deg),
                vs_fft: fft_index.filter(|&fi| fi != mi).map(|_| MeanCi::paired(&mine, &base)),
                excluded,
            });
        }
    }
    Ok(RobustnessReport { rows, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::QuadraticProbe;
    use crate::reparam::MapSpec;
    use crate::runner::Sequential;

    #[test]
    fn fft_delta_examples() {
        let eps = [1.0, 1.0];
        let g = [0.0, 0.0];
        assert!((fft_loss_delta_parts(&Matrix::identity(2), &eps, &g).unwrap().focused - 1.0).abs() < 1e-15);
        assert!((fft_loss_delta_parts(&Matrix::diag(&[1.0, 4.0]), &eps, &g).unwrap().focused - 0.625).abs() < 1e-15);
        assert_eq!(fft_loss_delta_parts(&Matrix::identity(2), &[0.0, 0.0], &g).unwrap().focused, 0.0);
        assert!(matches!(
            fft_loss_delta_parts(&Matrix::diag(&[1.0, 0.0]), &eps, &g),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn worked_instance_values() {
        let w = worked_instance().unwrap();
        assert!((w.delta_l_full - 0.625).abs() < 1e-12);
        assert!((w.delta_l_peft - 0.5).abs() < 1e-12);
        assert!((w.unconstrained_min + 0.625).abs() < 1e-12);
        assert!((w.constrained_min + 0.5).abs() < 1e-12);
        assert!((w.gap - 0.125).abs() < 1e-12);
    }

    #[test]
    fn peft_delta_special_cases() {
        let h = Matrix::diag(&[1.0, 4.0]);
        let q = Matrix::from_rows(&[&[1.0], &[0.0]]).unwrap();
        assert_eq!(peft_loss_delta_q(&h, &q, &[0.0, 3.0], &[0.0, 0.0]).unwrap(), 0.0);
        let full = Matrix::identity(2);
        let eps = [0.3, -0.7];
        let a = peft_loss_delta_q(&h, &full, &eps, &[0.0, 0.0]).unwrap();
        let b = fft_loss_delta_parts(&h, &eps, &[0.0, 0.0]).unwrap().focused;
        assert!((a - b).abs() < 1e-15);
        assert!(subspace_gap_q(&h, &full, &eps, &[0.2, 0.1]).unwrap().gap.abs() < 1e-15);
    }

    #[test]
    fn aligned_block_diagonal_has_zero_gap() {
        let h = Matrix::diag(&[2.0, 3.0, 5.0]);
        let q = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let g = subspace_gap_q(&h, &q, &[1.0, -1.0, 0.0], &[0.5, 0.5, 0.0]).unwrap();
        assert!(g.gap.abs() < 1e-15);
    }

    #[test]
    fn random_instances_respect_orderings() {
        let fam = InstanceFamily::default();
        let mut r = rng::from_seed(77);
        for t in 0..200 {
            let inst = fam.sample(&mut r).unwrap();
            let c = check_instance(&inst, t, &mut r).unwrap();
            assert!(c.gap >= -GAP_SLACK);
            assert!(c.psd_min_eig >= -PSD_SLACK);
            assert!(c.degeneration_error < 1e-10, "{}", c.degeneration_error);
        }
    }

    #[test]
    fn taylor_residual_cases() {
        let mut r = rng::from_seed(5);
        let probe = QuadraticProbe::new(Matrix::diag(&[1.0, 3.0, 2.0]), vec![0.1, 0.2, 0.3], 1.0).unwrap();
        assert!(taylor_residual(&probe, &[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0]).unwrap() < 1e-12);
        let (net, batch) = tanh_instance(&mut r).unwrap();
        assert_eq!(taylor_consistency(&net, LossKind::SquaredError, &batch, &vec![0.0; net.param_count()]).unwrap(), 0.0);
        let obj = NetObjective::new(&net, LossKind::SquaredError, &batch);
        let dir = rng::gaussian_vec(&mut r, net.param_count());
        let s = taylor_scaling(&obj, &net.params(), &dir, 1e-2, 5e-3).unwrap();
        assert!((2.5..=3.5).contains(&s.exponent), "{}", s.exponent);
    }

    #[test]
    fn net_report_records_expansion() {
        let rep = verify_perturbation(&PerturbationConfig { n_instances: 20, n_taylor_nets: 3, ..Default::default() }, 4, &Sequential).unwrap();
        assert!(rep.passed());
        let ex = &rep.net_example;
        let recombined = ex.parallel_excess + ex.perpendicular_term - ex.cross_term;
        assert!((recombined - ex.headline_difference).abs() < 1e-9 * (1.0 + ex.headline_difference.abs()));
        assert!(ex.subspace.gap >= -GAP_SLACK);
    }

    #[test]
    fn robustness_zero_noise_and_full_space() {
        let mut cfg = RobustnessConfig::default();
        cfg.trials = 4;
        cfg.task.test_size = 300;
        cfg.noise_scales = vec![0.0, 0.5];
        cfg.training = Training::Fixed { optimizer: OptimizerConfig::gd(0.5, 60) };
        let d = 16 * 8 + 8 * 4;
        cfg.methods = vec![Method::Fft, Method::Peft { map: MapSpec::Subspace { k: d, seed: 1 } }];
        let rep = robustness_experiment(&cfg, 2, &Sequential).unwrap();
        for row in rep.rows.iter().filter(|r| r.noise_scale == 0.0) {
            assert_eq!(row.clean, row.perturbed);
        }
        for res in &rep.results {
            assert!((0.0..=1.0).contains(&res.clean_metric.mean));
            if let Some(ci) = res.vs_fft {
                assert!(ci.contains(0.0, 1e-10), "{ci:?}");
            }
        }
        assert_eq!(rep.rows.len(), 2 * 2 * 4);
    }
}
