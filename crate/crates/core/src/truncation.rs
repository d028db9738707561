//! Rank truncation of an ideal full fine-tuning update: how test loss and
//! the bound terms behave as the retained rank grows.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::netcore::{self, Activation, DenseNet, Layer, LossKind, Sample};
use crate::numerics::{svd, truncate_from, Matrix};
use crate::reparam::random_orthonormal;
use crate::rng::{self, Rng};
use crate::runner::TrialRunner;
use crate::trainer::{self, OptimizerConfig, TrainTrace, CONVERGENCE_GRAD_TOL};

pub const DEFAULT_PLATEAU_TOL: f64 = 1e-3;
/// Default tail tolerance, relative to the total spectral energy.
pub const DEFAULT_RELATIVE_EPS_TAIL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IdealUpdate {
    pub layer: usize,
    pub delta: Matrix,
    pub final_grad_norm: f64,
    pub trace: TrainTrace,
    pub trained: DenseNet,
}

/// `ΔW* = W_trained − W₀` for `layer`, after full fine-tuning reaches the
/// gradient-norm stopping rule. A missing `grad_tol` defaults to 1e-8.
pub fn ideal_update(net0: &DenseNet, layer: usize, loss: LossKind, data: &[Sample], opt: &OptimizerConfig) -> Result<IdealUpdate> {
    let mut opt = *opt;
    let tol = *opt.grad_tol.get_or_insert(CONVERGENCE_GRAD_TOL);
    let (trained, trace) = trainer::train_full(net0, loss, data, &opt)?;
    if !trace.converged {
        return Err(Error::NotConverged { grad_norm: trace.final_grad_norm, tol });
    }
    let w0 = &net0.layers().get(layer).ok_or_else(|| Error::ConfigInvalid(alloc::format!("no layer {layer}")))?.weight;
    let delta = trained.layers()[layer].weight.sub(w0)?;
    Ok(IdealUpdate { layer, delta, final_grad_norm: trace.final_grad_norm, trace, trained })
}

/// Terms of the rank-r loss bound: `L_loss·√tail` and `√(r/N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundTerms {
    pub lipschitz_term: f64,
    pub sqrt_r_over_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncationCurve {
    pub ranks: Vec<usize>,
    pub test_losses: Vec<f64>,
    pub frob_errors: Vec<f64>,
    pub tail_energies: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub n_train: usize,
    pub eps_tail: f64,
    pub r_c_estimate: usize,
    /// Empirical `max |loss(r) − loss(ΔW*)| / ‖ΔW* − ΔW_r‖_F` over the curve.
    pub loss_lipschitz: f64,
    pub bound_terms: Vec<BoundTerms>,
    /// Loss with the untruncated update.
    pub full_rank_loss: f64,
}

impl TruncationCurve {
    pub fn loss_at(&self, r: usize) -> Option<f64> {
        self.ranks.iter().position(|&x| x == r).map(|i| self.test_losses[i])
    }

    /// Largest `|frob_error² − tail_energy|` relative to the total energy.
    pub fn eckart_young_residual(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        self.frob_errors
            .iter()
            .zip(&self.tail_energies)
            .map(|(f, t)| (f * f - t).abs() / (1.0 + total))
            .fold(0.0, f64::max)
    }
}

/// Tail energies `Σ_{i>r} σ_i²` for `r = 0..=len`.
pub fn tail_energies(sigma: &[f64]) -> Vec<f64> {
    let mut tails = alloc::vec![0.0; sigma.len() + 1];
    for r in (0..sigma.len()).rev() {
        tails[r] = tails[r + 1] + sigma[r] * sigma[r];
    }
    tails
}

/// Smallest `r` whose tail energy is below `eps_tail`; an exactly empty
/// tail always qualifies.
pub fn critical_rank(sigma: &[f64], eps_tail: f64) -> usize {
    tail_energies(sigma).iter().position(|&t| t == 0.0 || t < eps_tail).unwrap_or(sigma.len())
}

pub fn default_eps_tail(sigma: &[f64]) -> f64 {
    DEFAULT_RELATIVE_EPS_TAIL * sigma.iter().map(|s| s * s).sum::<f64>()
}

/// Traces `loss_fn(ΔW_r)` over `ranks`, where `ΔW_r` is the best rank-r
/// approximation of `delta_star`.
pub fn truncation_curve_with<F>(
    delta_star: &Matrix,
    ranks: &[usize],
    eps_tail: Option<f64>,
    n_train: usize,
    loss_fn: F,
) -> Result<TruncationCurve>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    let s = svd(delta_star)?;
    let max_rank = delta_star.rows().min(delta_star.cols());
    if let Some(&bad) = ranks.iter().find(|&&r| r > max_rank) {
        return Err(Error::RankOutOfRange { rank: bad, max: max_rank });
    }
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    let eps_tail = eps_tail.unwrap_or_else(|| default_eps_tail(&s.sigma));
    if !(eps_tail >= 0.0) {
        return Err(Error::ConfigInvalid("eps_tail must be non-negative".into()));
    }
    if n_train == 0 {
        return Err(Error::ConfigInvalid("n_train must be positive".into()));
    }
    let full_rank_loss = loss_fn(delta_star)?;
    let mut test_losses = Vec::with_capacity(ranks.len());
    let mut frob_errors = Vec::with_capacity(ranks.len());
    let mut tails = Vec::with_capacity(ranks.len());
    for &r in &ranks {
        let (dr, tail) = truncate_from(&s, delta_star, r);
        test_losses.push(loss_fn(&dr)?);
        frob_errors.push(delta_star.sub(&dr)?.frobenius_norm());
        tails.push(tail);
    }
    let loss_lipschitz = test_losses
        .iter()
        .zip(&frob_errors)
        .filter(|(_, &f)| f > 0.0)
        .map(|(l, f)| (l - full_rank_loss).abs() / f)
        .fold(0.0, f64::max);
    let bound_terms = ranks
        .iter()
        .zip(&tails)
        .map(|(&r, t)| BoundTerms {
            lipschitz_term: loss_lipschitz * libm::sqrt(*t),
            sqrt_r_over_n: libm::sqrt(r as f64 / n_train as f64),
        })
        .collect();
    Ok(TruncationCurve {
        ranks,
        test_losses,
        frob_errors,
        tail_energies: tails,
        r_c_estimate: critical_rank(&s.sigma, eps_tail),
        singular_values: s.sigma,
        n_train,
        eps_tail,
        loss_lipschitz,
        bound_terms,
        full_rank_loss,
    })
}

/// Test loss of `net0` with `layer` set to `W₀ + ΔW_r`.
pub fn truncation_curve(
    net0: &DenseNet,
    layer: usize,
    delta_star: &Matrix,
    loss: LossKind,
    test: &[Sample],
    ranks: &[usize],
    eps_tail: Option<f64>,
    n_train: usize,
) -> Result<TruncationCurve> {
    let w0 = &net0.layers().get(layer).ok_or_else(|| Error::ConfigInvalid(alloc::format!("no layer {layer}")))?.weight;
    truncation_curve_with(delta_star, ranks, eps_tail, n_train, |dr| {
        netcore::loss(&net0.with_layer_weight(layer, w0.add(dr)?)?, loss, test)
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlateauDiagnostics {
    pub plateau: bool,
    pub r_c_estimate: usize,
    pub plateau_tol: f64,
    /// Largest relative gap to the full-rank loss among ranks `>= r_c`.
    pub worst_gap: f64,
    pub worst_rank: Option<usize>,
}

pub fn plateau_check(curve: &TruncationCurve, plateau_tol: f64) -> PlateauDiagnostics {
    let scale = 1.0 + curve.full_rank_loss.abs();
    let mut worst_gap: f64 = 0.0;
    let mut worst_rank = None;
    for (&r, &l) in curve.ranks.iter().zip(&curve.test_losses) {
        if r < curve.r_c_estimate {
            continue;
        }
        let gap = (l - curve.full_rank_loss).abs() / scale;
        if worst_rank.is_none() || gap > worst_gap {
            worst_gap = gap;
            worst_rank = Some(r);
        }
    }
    PlateauDiagnostics {
        plateau: worst_gap <= plateau_tol,
        r_c_estimate: curve.r_c_estimate,
        plateau_tol,
        worst_gap,
        worst_rank,
    }
}

/// Single linear layer regressing a teacher `W₀ + UVᵀ` of chosen rank.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TeacherConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub teacher_rank: usize,
    /// Scale of the teacher perturbation's singular values.
    pub teacher_scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Standard deviation of additive label noise.
    pub noise: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { in_dim: 8, out_dim: 6, teacher_rank: 2, teacher_scale: 1.0, n_train: 200, n_test: 500, noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTask {
    pub net0: DenseNet,
    pub teacher_delta: Matrix,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn rank_teacher_task(cfg: &TeacherConfig, r: &mut Rng) -> Result<TeacherTask> {
    let (din, dout, k) = (cfg.in_dim, cfg.out_dim, cfg.teacher_rank);
    if din == 0 || dout == 0 || k > din.min(dout) || cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::ConfigInvalid("teacher needs positive dims, sample counts, and rank <= min(in, out)".into()));
    }
    let net0 = DenseNet::random(&[din, dout], &[Activation::Identity], false, r)?;
    let teacher_delta = if k == 0 {
        Matrix::zeros(dout, din)
    } else {
        let u = random_orthonormal(dout, k, r)?;
        let v = random_orthonormal(din, k, r)?;
        // Distinct singular values scale·(1, 0.8, 0.6, ...), all well separated from 0.
        let s: Vec<f64> = (0..k).map(|i| cfg.teacher_scale * (1.0 - 0.2 * i as f64 / k as f64)).collect();
        Matrix::from_fn(dout, din, |a, b| (0..k).map(|i| u[(a, i)] * s[i] * v[(b, i)]).sum())
    };
    let teacher = DenseNet::new(alloc::vec![Layer::new(
        net0.layers()[0].weight.add(&teacher_delta)?,
        None,
        Activation::Identity
    )?])?;
    let sample = |n: usize, r: &mut Rng| -> Result<Vec<Sample>> {
        (0..n)
            .map(|_| {
                let x = rng::gaussian_vec(r, din);
                let mut y = teacher.forward(&x)?;
                for v in &mut y {
                    *v += cfg.noise * rng::gaussian(r);
                }
                Ok(Sample::new(x, y))
            })
            .collect()
    };
    let train = sample(cfg.n_train, r)?;
    let test = sample(cfg.n_test, r)?;
    Ok(TeacherTask { net0, teacher_delta, train, test })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TruncationSuiteConfig {
    pub teacher: TeacherConfig,
    pub plateau_tol: f64,
    pub max_steps: usize,
    pub random_matrices: usize,
    pub max_dim: usize,
}

impl Default for TruncationSuiteConfig {
    fn default() -> Self {
        Self { teacher: TeacherConfig::default(), plateau_tol: DEFAULT_PLATEAU_TOL, max_steps: 50_000, random_matrices: 100, max_dim: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncationSuiteReport {
    /// Per random matrix, the largest `|‖M − M_r‖²_F − tail(r)| / (1 + ‖M‖²_F)` over all `r`.
    pub eckart_young: Vec<f64>,
    pub eckart_young_max: f64,
    pub curve: TruncationCurve,
    pub plateau: PlateauDiagnostics,
    pub ideal_grad_norm: f64,
    pub teacher_rank: usize,
    /// `|loss(r_teacher) − loss(full)|`.
    pub plateau_gap: f64,
    /// `loss(r_teacher − 1) − loss(full)`.
    pub below_rank_excess: Option<f64>,
    /// `|loss(full) − FFT test loss|`.
    pub fft_mismatch: f64,
    /// Training loss per step of the ideal update.
    pub ideal_losses: Vec<f64>,
}

impl TruncationSuiteReport {
    pub fn passed(&self) -> bool {
        self.eckart_young_max <= 1e-9
            && self.curve.r_c_estimate == self.teacher_rank
            && self.plateau_gap <= 1e-6
            && self.below_rank_excess.map_or(true, |e| e >= 10.0 * self.plateau.plateau_tol)
            && self.fft_mismatch <= 1e-9
            && self.plateau.plateau
    }
}

pub fn eckart_young_defect(m: &Matrix) -> Result<f64> {
    let s = svd(m)?;
    let tails = tail_energies(&s.sigma);
    let scale = 1.0 + m.frobenius_norm() * m.frobenius_norm();
    let mut worst: f64 = 0.0;
    for (r, tail) in tails.iter().enumerate() {
        let (mr, t) = truncate_from(&s, m, r);
        let e = m.sub(&mr)?.frobenius_norm();
        worst = worst.max((e * e - tail).abs().max((t - tail).abs()) / scale);
    }
    Ok(worst)
}

pub fn truncation_suite<R: TrialRunner>(cfg: &TruncationSuiteConfig, seed: u64, runner: &R) -> Result<TruncationSuiteReport> {
    if cfg.max_dim == 0 || !(cfg.plateau_tol > 0.0) {
        return Err(Error::ConfigInvalid("truncation suite needs max_dim >= 1 and plateau_tol > 0".into()));
    }
    let eckart_young: Vec<f64> = runner
        .run(cfg.random_matrices, |t| {
            let mut r = rng::stream(seed, t as u64, "eckart-young");
            let rows = rng::uniform_usize(&mut r, 1, cfg.max_dim);
            let cols = rng::uniform_usize(&mut r, 1, cfg.max_dim);
            eckart_young_defect(&Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols))?)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let mut r = rng::stream(seed, 0, "truncation-teacher");
    let task = rank_teacher_task(&cfg.teacher, &mut r)?;
    let obj = netcore::NetObjective::new(&task.net0, LossKind::SquaredError, &task.train);
    let lr = trainer::stable_gd_rate(&obj, &task.net0.params())?;
    let ideal = ideal_update(&task.net0, 0, LossKind::SquaredError, &task.train, &OptimizerConfig::gd(lr, cfg.max_steps))?;
    let full = cfg.teacher.in_dim.min(cfg.teacher.out_dim);
    let ranks: Vec<usize> = (0..=full).collect();
    let curve = truncation_curve(&task.net0, 0, &ideal.delta, LossKind::SquaredError, &task.test, &ranks, None, cfg.teacher.n_train)?;
    let full_loss = curve.full_rank_loss;
    let tr = cfg.teacher.teacher_rank;
    let fft_loss = netcore::loss(&ideal.trained, LossKind::SquaredError, &task.test)?;
    Ok(TruncationSuiteReport {
        eckart_young_max: eckart_young.iter().copied().fold(0.0, f64::max),
        eckart_young,
        plateau: plateau_check(&curve, cfg.plateau_tol),
        ideal_grad_norm: ideal.final_grad_norm,
        teacher_rank: tr,
        plateau_gap: (curve.loss_at(tr).unwrap_or(f64::INFINITY) - full_loss).abs(),
        below_rank_excess: tr.checked_sub(1).and_then(|r1| curve.loss_at(r1)).map(|l| l - full_loss),
        fft_mismatch: (full_loss - fft_loss).abs(),
        ideal_losses: ideal.trace.losses,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::NetObjective;

    fn solved_update(task: &TeacherTask) -> IdealUpdate {
        let obj = NetObjective::new(&task.net0, LossKind::SquaredError, &task.train);
        let lr = trainer::stable_gd_rate(&obj, &task.net0.params()).unwrap();
        ideal_update(&task.net0, 0, LossKind::SquaredError, &task.train, &OptimizerConfig::gd(lr, 50_000)).unwrap()
    }

    #[test]
    fn tails_and_critical_rank() {
        assert_eq!(tail_energies(&[3.0, 2.0, 1.0]), alloc::vec![14.0, 5.0, 1.0, 0.0]);
        assert_eq!(critical_rank(&[3.0, 2.0, 1.0], 1.5), 2);
        assert_eq!(critical_rank(&[0.0, 0.0], 0.0), 0);
        assert!(critical_rank(&[3.0, 2.0, 1.0], 0.5) >= critical_rank(&[3.0, 2.0, 1.0], 1.5));
    }

    #[test]
    fn rank_two_teacher_plateaus_at_two() {
        let mut r = rng::from_seed(31);
        let task = rank_teacher_task(&TeacherConfig::default(), &mut r).unwrap();
        let ideal = solved_update(&task);
        assert!(ideal.final_grad_norm < 1e-8);
        assert!(ideal.delta.sub(&task.teacher_delta).unwrap().frobenius_norm() < 1e-6);
        let sigma = svd(&ideal.delta).unwrap().sigma;
        assert!(sigma[2] / sigma[0] < 1e-6);
        let ranks: Vec<usize> = (0..=6).collect();
        let curve = truncation_curve(&task.net0, 0, &ideal.delta, LossKind::SquaredError, &task.test, &ranks, None, 200).unwrap();
        assert_eq!(curve.r_c_estimate, 2);
        let full = curve.loss_at(6).unwrap();
        assert!((curve.loss_at(2).unwrap() - full).abs() < 1e-6);
        assert!(curve.loss_at(1).unwrap() - full > 10.0 * DEFAULT_PLATEAU_TOL);
        assert!(plateau_check(&curve, 1e-4).plateau);
        assert!(curve.eckart_young_residual() < 1e-9);
        let fft = netcore::loss(&ideal.trained, LossKind::SquaredError, &task.test).unwrap();
        assert!((full - fft).abs() < 1e-9);
        let base = netcore::loss(&task.net0, LossKind::SquaredError, &task.test).unwrap();
        assert_eq!(curve.loss_at(0).unwrap(), base);
        assert!(curve.frob_errors.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn suite_passes_on_defaults() {
        let cfg = TruncationSuiteConfig { random_matrices: 10, ..Default::default() };
        let rep = truncation_suite(&cfg, 9, &crate::runner::Sequential).unwrap();
        assert!(rep.passed(), "{:?}", rep.plateau);
        assert_eq!(rep.eckart_young.len(), 10);
    }

    #[test]
    fn solved_task_has_zero_update() {
        let mut r = rng::from_seed(32);
        let cfg = TeacherConfig { teacher_rank: 0, ..TeacherConfig::default() };
        let task = rank_teacher_task(&cfg, &mut r).unwrap();
        let ideal = solved_update(&task);
        assert!(ideal.delta.frobenius_norm() < 1e-8);
        let curve = truncation_curve_with(&Matrix::zeros(3, 3), &[0, 1, 2, 3], None, 10, |_| Ok(0.0)).unwrap();
        assert_eq!(curve.r_c_estimate, 0);
        assert!(plateau_check(&curve, DEFAULT_PLATEAU_TOL).plateau);
    }

    #[test]
    fn geometric_spectrum_surrogate() {
        let mut r = rng::from_seed(33);
        let n = 10;
        let u = random_orthonormal(n, n, &mut r).unwrap();
        let v = random_orthonormal(n, n, &mut r).unwrap();
        let sig: Vec<f64> = (1..=n).map(|i| libm::exp(-(i as f64))).collect();
        let dstar = Matrix::from_fn(n, n, |a, b| (0..n).map(|i| u[(a, i)] * sig[i] * v[(b, i)]).sum());
        let ranks: Vec<usize> = (0..=n).collect();
        let curve = truncation_curve_with(&dstar, &ranks, None, 100, |dr| Ok(dstar.sub(dr)?.frobenius_norm().powi(2))).unwrap();
        let q = libm::exp(-2.0);
        for (&rk, t) in curve.ranks.iter().zip(&curve.tail_energies) {
            let analytic = (libm::pow(q, (rk + 1) as f64) - libm::pow(q, (n + 1) as f64)) / (1.0 - q);
            assert!((t - analytic).abs() < 1e-12);
        }
        let eps = curve.eps_tail;
        let expected = (0..=n)
            .find(|&rk| (libm::pow(q, (rk + 1) as f64) - libm::pow(q, (n + 1) as f64)) / (1.0 - q) < eps)
            .unwrap();
        assert_eq!(curve.r_c_estimate, expected);
        assert!(plateau_check(&curve, DEFAULT_PLATEAU_TOL).plateau);
    }

    #[test]
    fn ranks_out_of_range() {
        let m = Matrix::identity(3);
        assert!(matches!(truncation_curve_with(&m, &[4], None, 1, |_| Ok(0.0)), Err(Error::RankOutOfRange { .. })));
    }
}
