//! Risk versus sample count for FFT and PEFT on synthetic teacher tasks,
//! fitted scaling exponents, marginal-benefit ratios, and the distribution
//! of weight increments.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{shape_err, Error, Result};
use crate::netcore::{self, Activation, DenseNet, LossKind, NetObjective, Objective, Sample};
use crate::reparam::{MapSpec, ReparamMap};
use crate::rng::{self, Rng};
use crate::runner::TrialRunner;
use crate::stats::{self, MeanCi};
use crate::trainer::{self, minimize, OptimizerConfig, PeftObjective, TrainTrace, CONVERGENCE_GRAD_TOL};
use crate::truncation::{rank_teacher_task, TeacherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden widths of the teacher; empty for a linear teacher.
    #[cfg_attr(feature = "serde", serde(default))]
    pub teacher_hidden: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default = "default_teacher_activation"))]
    pub teacher_activation: Activation,
    /// Label noise; added to targets (regression) or to logits before the
    /// argmax (classification).
    pub noise_std: f64,
    pub pool_size: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_test_size"))]
    pub test_size: usize,
    pub seed: u64,
}

#[allow(dead_code)]
fn default_teacher_activation() -> Activation {
    Activation::Tanh
}

#[allow(dead_code)]
fn default_test_size() -> usize {
    10_000
}

impl TaskConfig {
    /// Noisy linear regression used for the sample-scaling study.
    pub fn noisy_linear(input_dim: usize, noise_std: f64, seed: u64) -> Self {
        Self {
            kind: TaskKind::Regression,
            input_dim,
            output_dim: 1,
            teacher_hidden: Vec::new(),
            teacher_activation: Activation::Identity,
            noise_std,
            pool_size: 4000,
            test_size: 10_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.pool_size == 0 || self.test_size == 0 {
            return Err(Error::ConfigInvalid("task sizes must be at least 1".into()));
        }
        if self.kind == TaskKind::Classification && self.output_dim < 2 {
            return Err(Error::ConfigInvalid("classification needs at least 2 classes".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::ConfigInvalid("noise_std must be finite and non-negative".into()));
        }
        if self.teacher_hidden.contains(&0) {
            return Err(Error::ConfigInvalid("teacher widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub config: TaskConfig,
    pub teacher: DenseNet,
    pub train_pool: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SynthTask {
    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Draws `n` fresh labelled samples from the generator.
    pub fn draw(&self, n: usize, r: &mut Rng) -> Result<Vec<Sample>> {
        draw(&self.config, &self.teacher, n, r)
    }

    /// Loss appropriate to the task.
    pub fn loss(&self) -> LossKind {
        match self.config.kind {
            TaskKind::Regression => LossKind::SquaredError,
            TaskKind::Classification => LossKind::SoftmaxCrossEntropy,
        }
    }
}

fn draw(cfg: &TaskConfig, teacher: &DenseNet, n: usize, r: &mut Rng) -> Result<Vec<Sample>> {
    (0..n)
        .map(|_| {
            let x = rng::gaussian_vec(r, cfg.input_dim);
            let mut y = teacher.forward(&x)?;
            for v in &mut y {
                *v += cfg.noise_std * rng::gaussian(r);
            }
            if cfg.kind == TaskKind::Classification {
                let c = argmax(&y);
                y = vec![0.0; cfg.output_dim];
                y[c] = 1.0;
            }
            Ok(Sample::new(x, y))
        })
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Teacher, a training pool and a held-out test pool, each from its own
/// seed stream.
pub fn generate_task(cfg: &TaskConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let mut widths = vec![cfg.input_dim];
    widths.extend(&cfg.teacher_hidden);
    widths.push(cfg.output_dim);
    let mut acts = vec![cfg.teacher_activation; cfg.teacher_hidden.len()];
    acts.push(Activation::Identity);
    let mut tr = rng::stream(cfg.seed, 0, "task-teacher");
    let mut teacher = DenseNet::random(&widths, &acts, false, &mut tr)?;
    if cfg.kind == TaskKind::Classification {
        // Sharpen logits so labels are not dominated by ties near the boundary.
        let last = teacher.depth() - 1;
        let w = teacher.layers()[last].weight.scale(3.0);
        teacher = teacher.with_layer_weight(last, w)?;
    }
    let train_pool = draw(cfg, &teacher, cfg.pool_size, &mut rng::stream(cfg.seed, 0, "task-train-pool"))?;
    let test = draw(cfg, &teacher, cfg.test_size, &mut rng::stream(cfg.seed, 0, "task-test-pool"))?;
    Ok(SynthTask { config: cfg.clone(), teacher, train_pool, test })
}

/// Fraction of samples whose predicted class matches the one-hot label.
pub fn accuracy(net: &DenseNet, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("accuracy of an empty set".into()));
    }
    let mut hits = 0usize;
    for s in data {
        if argmax(&net.forward(&s.x)?) == argmax(&s.y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields))]
pub enum Method {
    Fft,
    Peft { map: MapSpec },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Fft => "fft".into(),
            Method::Peft { map } => map.label(),
        }
    }
}

/// How each (N, trial) model is fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields))]
pub enum Training {
    /// Gradient descent at `1/λ_max` until the gradient norm is below `grad_tol`.
    Converge { max_steps: usize, grad_tol: f64 },
    Fixed { optimizer: OptimizerConfig },
}

impl Default for Training {
    fn default() -> Self {
        Training::Converge { max_steps: 100_000, grad_tol: CONVERGENCE_GRAD_TOL }
    }
}

/// Student architecture; `hidden` empty gives a linear model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StudentConfig {
    #[cfg_attr(feature = "serde", serde(default))]
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[cfg_attr(feature = "serde", serde(default))]
    pub bias: bool,
    pub seed: u64,
}

impl StudentConfig {
    pub fn linear(seed: u64) -> Self {
        Self { hidden: Vec::new(), activation: Activation::Identity, bias: false, seed }
    }

    pub fn build(&self, input_dim: usize, output_dim: usize) -> Result<DenseNet> {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(output_dim);
        let mut acts = vec![self.activation; self.hidden.len()];
        acts.push(Activation::Identity);
        DenseNet::random(&widths, &acts, self.bias, &mut rng::stream(self.seed, 0, "student"))
    }
}

/// Outcome of fitting one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub net: DenseNet,
    /// `θ − θ₀` in full parameter space.
    pub increment: Vec<f64>,
    pub trace: TrainTrace,
    pub converged: bool,
}

fn run_training<O: Objective>(obj: &O, x0: &[f64], training: &Training) -> Result<TrainTrace> {
    match training {
        Training::Converge { max_steps, grad_tol } => {
            let lr = trainer::stable_gd_rate(obj, x0)?;
            minimize(obj, x0, &OptimizerConfig::gd(lr, *max_steps).with_grad_tol(*grad_tol))
        }
        Training::Fixed { optimizer } => minimize(obj, x0, optimizer),
    }
}

/// Fits `method` on `data` starting from `net0`. `map` must be prebuilt for PEFT.
pub fn fit(
    net0: &DenseNet,
    map: Option<&ReparamMap>,
    loss: LossKind,
    data: &[Sample],
    training: &Training,
    init_seed: u64,
) -> Result<Fitted> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("training set is empty".into()));
    }
    let theta0 = net0.params();
    let base = NetObjective::new(net0, loss, data);
    let (increment, trace) = match map {
        None => {
            let trace = run_training(&base, &theta0, training)?;
            let inc = trace.params.iter().zip(&theta0).map(|(a, b)| a - b).collect();
            (inc, trace)
        }
        Some(map) => {
            let obj = PeftObjective::new(map, base, &theta0)?;
            let phi0 = map.initial_phi(&mut rng::stream(init_seed, 0, "peft-init"));
            let trace = run_training(&obj, &phi0, training)?;
            (map.apply(&trace.params)?, trace)
        }
    };
    let net = net0.shifted(&increment)?;
    let converged = match training {
        Training::Converge { .. } => trace.converged,
        Training::Fixed { .. } => true,
    };
    Ok(Fitted { net, increment, trace, converged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskRow {
    pub n: usize,
    pub trial: usize,
    pub train_risk: f64,
    pub test_risk: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskCurve {
    pub method: String,
    pub k: usize,
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub train_risk: Vec<f64>,
    pub test_risk: Vec<f64>,
    pub gap: Vec<f64>,
    /// `R(N_i) − R(N_{i+1})` on test risk.
    pub marginal: Vec<f64>,
    pub rows: Vec<RiskRow>,
    pub not_converged: usize,
    pub fitted_exponent: Option<f64>,
    pub r_squared: Option<f64>,
}

impl RiskCurve {
    /// Curve assembled from per-N means; used for constructed inputs.
    pub fn from_means(method: &str, k: usize, d: usize, n_grid: Vec<usize>, train_risk: Vec<f64>, test_risk: Vec<f64>) -> Result<Self> {
        if n_grid.len() != train_risk.len() || n_grid.len() != test_risk.len() {
            return Err(shape_err!("{} sample counts for {} / {} risks", n_grid.len(), train_risk.len(), test_risk.len()));
        }
        if n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigInvalid("n_grid must be strictly increasing".into()));
        }
        let gap: Vec<f64> = test_risk.iter().zip(&train_risk).map(|(a, b)| a - b).collect();
        let marginal = test_risk.windows(2).map(|w| w[0] - w[1]).collect();
        let mut c = Self {
            method: method.into(),
            k,
            d,
            n_grid,
            train_risk,
            test_risk,
            gap,
            marginal,
            rows: Vec::new(),
            not_converged: 0,
            fitted_exponent: None,
            r_squared: None,
        };
        if let Ok(f) = fit_scaling_exponent(&c) {
            c.fitted_exponent = Some(f.exponent);
            c.r_squared = Some(f.r_squared);
        }
        Ok(c)
    }

    /// Per-trial test risks at grid index `i`, ordered by trial.
    pub fn test_risks_at(&self, i: usize) -> Vec<f64> {
        let n = self.n_grid[i];
        self.rows.iter().filter(|r| r.n == n).map(|r| r.test_risk).collect()
    }

    pub fn train_risks_at(&self, i: usize) -> Vec<f64> {
        let n = self.n_grid[i];
        self.rows.iter().filter(|r| r.n == n).map(|r| r.train_risk).collect()
    }
}

/// Mean train and test risk per `N` over `trials` fresh subsets of the
/// training pool. Subsets depend only on `(seed, N, trial)`, so curves of
/// different methods built with the same seed are paired.
#[allow(clippy::too_many_arguments)]
pub fn risk_curve<R: TrialRunner>(
    task: &SynthTask,
    net0: &DenseNet,
    method: &Method,
    n_grid: &[usize],
    trials: usize,
    training: &Training,
    seed: u64,
    runner: &R,
) -> Result<RiskCurve> {
    if n_grid.is_empty() || trials == 0 {
        return Err(Error::ConfigInvalid("risk curve needs a non-empty grid and at least one trial".into()));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::ConfigInvalid("n_grid must be positive and strictly increasing".into()));
    }
    let pool = task.train_pool.len();
    if *n_grid.last().unwrap() > pool {
        return Err(Error::ConfigInvalid(alloc::format!("largest N exceeds the pool of {pool}")));
    }
    let map = match method {
        Method::Fft => None,
        Method::Peft { map } => Some(map.build(net0)?),
    };
    let loss = task.loss();
    let cells = runner.run(n_grid.len() * trials, |cell| -> Result<RiskRow> {
        let (ni, trial) = (cell / trials, cell % trials);
        let n = n_grid[ni];
        let mut r = rng::stream(seed, cell as u64, "risk-subset");
        let data: Vec<Sample> = index::sample(&mut r, pool, n).into_iter().map(|i| task.train_pool[i].clone()).collect();
        let f = fit(net0, map.as_ref(), loss, &data, training, rng::derive_seed(seed, cell as u64, "risk-init"))?;
        Ok(RiskRow {
            n,
            trial,
            train_risk: netcore::loss(&f.net, loss, &data)?,
            test_risk: netcore::loss(&f.net, loss, &task.test)?,
            converged: f.converged,
        })
    });
    let rows: Vec<RiskRow> = cells.into_iter().collect::<Result<_>>()?;
    let mut train_risk = Vec::with_capacity(n_grid.len());
    let mut test_risk = Vec::with_capacity(n_grid.len());
    for ni in 0..n_grid.len() {
        let slice = &rows[ni * trials..(ni + 1) * trials];
        train_risk.push(stats::mean(&slice.iter().map(|r| r.train_risk).collect::<Vec<_>>()));
        test_risk.push(stats::mean(&slice.iter().map(|r| r.test_risk).collect::<Vec<_>>()));
    }
    let (k, d) = match &map {
        Some(m) => (m.k(), m.d()),
        None => (net0.param_count(), net0.param_count()),
    };
    let mut curve = RiskCurve::from_means(&method.label(), k, d, n_grid.to_vec(), train_risk, test_risk)?;
    curve.not_converged = rows.iter().filter(|r| !r.converged).count();
    curve.rows = rows;
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `log(gap)` against `log(N)`.
pub fn fit_power_law(ns: &[usize], gaps: &[f64]) -> Result<ScalingFit> {
    if ns.len() != gaps.len() {
        return Err(shape_err!("{} sample counts for {} gaps", ns.len(), gaps.len()));
    }
    if ns.len() < 4 {
        return Err(Error::DegenerateFit(alloc::format!("need at least 4 points, got {}", ns.len())));
    }
    if let Some(g) = gaps.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::DegenerateFit(alloc::format!("non-positive gap {g}")));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| libm::log(n as f64)).collect();
    let ys: Vec<f64> = gaps.iter().map(|&g| libm::log(g)).collect();
    let (exponent, intercept, r_squared) =
        stats::linear_fit(&xs, &ys).ok_or_else(|| Error::DegenerateFit("sample counts are not distinct".into()))?;
    Ok(ScalingFit { exponent, intercept, r_squared })
}

pub fn fit_scaling_exponent(curve: &RiskCurve) -> Result<ScalingFit> {
    fit_power_law(&curve.n_grid, &curve.gap)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginalBenefit {
    /// `ΔR_peft / ΔR_full` per adjacent pair; `None` where `ΔR_full` is
    /// below the noise floor.
    pub ratios: Vec<Option<f64>>,
    pub flagged: Vec<usize>,
    pub median: Option<f64>,
    pub k: usize,
    pub d: usize,
    /// The linear-in-dimension prediction `k/d`.
    pub linear_model: f64,
    /// The square-root gap prediction `√(k/d)`.
    pub sqrt_model: f64,
    /// `mean_N(gap²·N)` per curve: the dimension implied by `gap = √(dim/N)`.
    pub implied_dim_full: f64,
    pub implied_dim_peft: f64,
    /// Ratio each model gives when fed the implied dimensions.
    pub implied_linear: f64,
    pub implied_sqrt: f64,
}

pub fn marginal_benefit_ratio(full: &RiskCurve, peft: &RiskCurve, noise_floor: f64) -> Result<MarginalBenefit> {
    if full.n_grid != peft.n_grid {
        return Err(shape_err!("curves over different sample grids"));
    }
    let mut ratios = Vec::with_capacity(full.marginal.len());
    let mut flagged = Vec::new();
    for (i, (df, dp)) in full.marginal.iter().zip(&peft.marginal).enumerate() {
        if df.abs() <= noise_floor {
            ratios.push(None);
            flagged.push(i);
        } else {
            ratios.push(Some(dp / df));
        }
    }
    let kept: Vec<f64> = ratios.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::DivisionDegenerate);
    }
    let implied = |c: &RiskCurve| stats::mean(&c.gap.iter().zip(&c.n_grid).map(|(g, &n)| g * g * n as f64).collect::<Vec<_>>());
    let (dim_f, dim_p) = (implied(full), implied(peft));
    let implied_linear = if dim_f > 0.0 { dim_p / dim_f } else { f64::NAN };
    let kd = peft.k as f64 / full.d.max(1) as f64;
    Ok(MarginalBenefit {
        ratios,
        flagged,
        median: stats::median(&kept),
        k: peft.k,
        d: full.d,
        linear_model: kd,
        sqrt_model: libm::sqrt(kd),
        implied_dim_full: dim_f,
        implied_dim_peft: dim_p,
        implied_linear,
        implied_sqrt: libm::sqrt(implied_linear),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistStats {
    pub increments: Vec<f64>,
    pub std: f64,
    pub excess_kurtosis: f64,
    pub histogram: Histogram,
    /// Index of the bin containing zero.
    pub zero_bin: usize,
}

/// Histogram over the symmetric range `[−m, m]`, `m = max |increment|`
/// (1 when all increments vanish), so zero always falls in a fixed bin.
pub fn delta_histogram(theta_before: &[f64], theta_after: &[f64], bins: usize) -> Result<DistStats> {
    if theta_before.len() != theta_after.len() {
        return Err(shape_err!("{} vs {} parameters", theta_before.len(), theta_after.len()));
    }
    increment_stats(theta_after.iter().zip(theta_before).map(|(a, b)| a - b).collect(), bins)
}

pub fn increment_stats(increments: Vec<f64>, bins: usize) -> Result<DistStats> {
    if bins < 3 {
        return Err(Error::ConfigInvalid("need at least 3 histogram bins".into()));
    }
    let mut m = increments.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        m = 1.0;
    }
    let width = 2.0 * m / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -m + width * i as f64).collect();
    let bin_of = |v: f64| (((v + m) / width) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for &v in &increments {
        counts[bin_of(v)] += 1;
    }
    Ok(DistStats {
        std: stats::std_dev(&increments),
        excess_kurtosis: stats::excess_kurtosis(&increments),
        histogram: Histogram { edges, counts },
        zero_bin: bin_of(0.0),
        increments,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IncrementTrial {
    pub trial: usize,
    pub fft_std: f64,
    pub fft_kurtosis: f64,
    pub peft_std: f64,
    pub peft_kurtosis: f64,
    pub fft_wider: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IncrementReport {
    pub trials: Vec<IncrementTrial>,
    pub fft_wider_count: usize,
    /// CI of `fft_std − peft_std`.
    pub std_difference: MeanCi,
    /// Full statistics of trial 0, kept as a representative histogram.
    pub example_fft: Option<DistStats>,
    pub example_peft: Option<DistStats>,
}

/// FFT against a rank-1 LoRA (frozen `B`, layer 0) on a fresh teacher task
/// per trial, both trained to convergence; compares increment spread.
pub fn increment_trial(cfg: &TeacherConfig, seed: u64, trial: usize, bins: usize) -> Result<(DistStats, DistStats)> {
    let mut r = rng::stream(seed, trial as u64, "increments");
    let task = rank_teacher_task(cfg, &mut r)?;
    let map = ReparamMap::lora_linear_random(&task.net0, 0, 1, &mut r)?;
    let training = Training::default();
    let fft = fit(&task.net0, None, LossKind::SquaredError, &task.train, &training, 0)?;
    let peft = fit(&task.net0, Some(&map), LossKind::SquaredError, &task.train, &training, 0)?;
    if !fft.converged || !peft.converged {
        return Err(Error::NotConverged { grad_norm: fft.trace.final_grad_norm.max(peft.trace.final_grad_norm), tol: CONVERGENCE_GRAD_TOL });
    }
    Ok((increment_stats(fft.increment, bins)?, increment_stats(peft.increment, bins)?))
}

pub fn increment_study<R: TrialRunner>(cfg: &TeacherConfig, trials: usize, bins: usize, seed: u64, runner: &R) -> Result<IncrementReport> {
    let results = runner.run(trials, |t| increment_trial(cfg, seed, t, bins));
    let mut rows = Vec::with_capacity(trials);
    let mut example_fft = None;
    let mut example_peft = None;
    for (t, res) in results.into_iter().enumerate() {
        let (f, p) = res?;
        rows.push(IncrementTrial {
            trial: t,
            fft_std: f.std,
            fft_kurtosis: f.excess_kurtosis,
            peft_std: p.std,
            peft_kurtosis: p.excess_kurtosis,
            fft_wider: f.std > p.std,
        });
        if t == 0 {
            example_fft = Some(f);
            example_peft = Some(p);
        }
    }
    let fs: Vec<f64> = rows.iter().map(|r| r.fft_std).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.peft_std).collect();
    Ok(IncrementReport {
        fft_wider_count: rows.iter().filter(|r| r.fft_wider).count(),
        std_difference: MeanCi::paired(&fs, &ps),
        trials: rows,
        example_fft,
        example_peft,
    })
}

/// Matched teacher task for the increment comparison: full-rank teacher
/// perturbation so a rank-1 adapter cannot represent it.
pub fn increment_task_config() -> TeacherConfig {
    TeacherConfig { in_dim: 8, out_dim: 6, teacher_rank: 6, teacher_scale: 1.0, n_train: 100, n_test: 10, noise: 0.1 }
}

/// Paired comparison of a PEFT curve against the FFT curve.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveComparison {
    pub method: String,
    pub k: usize,
    pub d: usize,
    /// Paired CI of `test_peft − test_fft` per `N`.
    pub test_difference: Vec<MeanCi>,
    /// Rows where both fits converged and PEFT train risk fell below
    /// FFT's by more than the slack.
    pub nesting_violations: usize,
    pub nesting_checked: usize,
    pub marginal: Option<MarginalBenefit>,
}

impl CurveComparison {
    pub fn matches_fft(&self, floor: f64) -> bool {
        self.test_difference.iter().all(|ci| ci.contains(0.0, floor))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScalingStudyConfig {
    pub task: TaskConfig,
    pub student: StudentConfig,
    /// PEFT methods compared against FFT; FFT is always run.
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub training: Training,
    pub noise_floor: f64,
}

impl Default for ScalingStudyConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::noisy_linear(20, 0.5, 17),
            student: StudentConfig::linear(23),
            methods: vec![
                Method::Peft { map: MapSpec::Subspace { k: 20, seed: 29 } },
                Method::Peft { map: MapSpec::Subspace { k: 5, seed: 31 } },
            ],
            n_grid: vec![50, 100, 200, 400, 800],
            trials: 30,
            training: Training::default(),
            noise_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingStudyReport {
    pub fft: RiskCurve,
    pub fft_fit: Option<ScalingFit>,
    pub peft: Vec<RiskCurve>,
    pub comparisons: Vec<CurveComparison>,
    /// Fit of the constructed sequence `N^{-1/2}` on the same grid.
    pub constructed_fit: ScalingFit,
    /// `N` values where mean test risk fell below mean train risk.
    pub negative_mean_gaps: Vec<usize>,
}

pub const NESTING_SLACK: f64 = 1e-9;

pub fn scaling_study<R: TrialRunner>(cfg: &ScalingStudyConfig, seed: u64, runner: &R) -> Result<ScalingStudyReport> {
    if !(cfg.noise_floor >= 0.0) {
        return Err(Error::ConfigInvalid("noise_floor must be non-negative".into()));
    }
    let task = generate_task(&cfg.task)?;
    let net0 = cfg.student.build(task.input_dim(), task.output_dim())?;
    let fft = risk_curve(&task, &net0, &Method::Fft, &cfg.n_grid, cfg.trials, &cfg.training, seed, runner)?;
    let fft_fit = fit_scaling_exponent(&fft).ok();
    let mut fft = fft;
    fft.fitted_exponent = fft_fit.map(|f| f.exponent);
    fft.r_squared = fft_fit.map(|f| f.r_squared);

    let mut peft = Vec::with_capacity(cfg.methods.len());
    let mut comparisons = Vec::with_capacity(cfg.methods.len());
    for m in cfg.methods.iter().filter(|m| **m != Method::Fft) {
        let mut curve = risk_curve(&task, &net0, m, &cfg.n_grid, cfg.trials, &cfg.training, seed, runner)?;
        if let Ok(f) = fit_scaling_exponent(&curve) {
            curve.fitted_exponent = Some(f.exponent);
            curve.r_squared = Some(f.r_squared);
        }
        let test_difference = (0..cfg.n_grid.len()).map(|i| MeanCi::paired(&curve.test_risks_at(i), &fft.test_risks_at(i))).collect();
        let pairs = curve.rows.iter().zip(&fft.rows).filter(|(p, f)| p.converged && f.converged);
        let (mut checked, mut violations) = (0, 0);
        for (p, f) in pairs {
            checked += 1;
            if p.train_risk < f.train_risk - NESTING_SLACK {
                violations += 1;
            }
        }
        comparisons.push(CurveComparison {
            method: curve.method.clone(),
            k: curve.k,
            d: curve.d,
            test_difference,
            nesting_violations: violations,
            nesting_checked: checked,
            marginal: marginal_benefit_ratio(&fft, &curve, cfg.noise_floor).ok(),
        });
        peft.push(curve);
    }
    let constructed: Vec<f64> = cfg.n_grid.iter().map(|&n| 1.0 / libm::sqrt(n as f64)).collect();
    let constructed_fit = fit_power_law(&cfg.n_grid, &constructed)?;
    let negative_mean_gaps = fft.n_grid.iter().zip(&fft.gap).filter(|(_, g)| **g < 0.0).map(|(n, _)| *n).collect();
    Ok(ScalingStudyReport { fft, fft_fit, peft, comparisons, constructed_fit, negative_mean_gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::Sequential;

    #[test]
    fn noiseless_linear_interpolates() {
        let mut cfg = TaskConfig::noisy_linear(5, 0.0, 3);
        cfg.pool_size = 50;
        cfg.test_size = 200;
        let task = generate_task(&cfg).unwrap();
        assert_eq!(task, generate_task(&cfg).unwrap());
        let net0 = StudentConfig::linear(1).build(5, 1).unwrap();
        let f = fit(&net0, None, LossKind::SquaredError, &task.train_pool[..20], &Training::default(), 0).unwrap();
        assert!(netcore::loss(&f.net, LossKind::SquaredError, &task.train_pool[..20]).unwrap() < 1e-10);
        assert!(netcore::loss(&f.net, LossKind::SquaredError, &task.test).unwrap() < 1e-6);
    }

    #[test]
    fn bayes_floor_for_noisy_regression() {
        let sigma = 0.5;
        let mut cfg = TaskConfig::noisy_linear(4, sigma, 5);
        cfg.pool_size = 3000;
        let task = generate_task(&cfg).unwrap();
        let net0 = StudentConfig::linear(2).build(4, 1).unwrap();
        let f = fit(&net0, None, LossKind::SquaredError, &task.train_pool, &Training::default(), 0).unwrap();
        let test = netcore::loss(&f.net, LossKind::SquaredError, &task.test).unwrap();
        assert!((test - sigma * sigma).abs() < 0.1 * sigma * sigma, "{test}");
    }

    #[test]
    fn exponent_of_constructed_gaps() {
        let ns = vec![50, 100, 200, 400, 800];
        let gaps: Vec<f64> = ns.iter().map(|&n| 3.0 / libm::sqrt(n as f64)).collect();
        let f = fit_power_law(&ns, &gaps).unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let flat = fit_power_law(&ns, &[0.2; 5]).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
        assert!(matches!(fit_power_law(&ns, &[0.1, 0.0, 0.1, 0.1, 0.1]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_power_law(&ns[..3], &gaps[..3]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn marginal_ratio_models() {
        let ns = vec![50, 100, 200, 400, 800];
        let curve = |dim: f64| {
            let test: Vec<f64> = ns.iter().map(|&n| libm::sqrt(dim / n as f64)).collect();
            RiskCurve::from_means("c", dim as usize, 64, ns.clone(), vec![0.0; 5], test).unwrap()
        };
        let (full, peft) = (curve(64.0), curve(4.0));
        let mb = marginal_benefit_ratio(&full, &peft, 1e-12).unwrap();
        for r in mb.ratios.iter().flatten() {
            assert!((r - 0.25).abs() < 1e-12);
        }
        assert!((mb.sqrt_model - 0.25).abs() < 1e-15);
        assert!((mb.linear_model - 0.0625).abs() < 1e-15);
        assert!((mb.implied_linear - 0.0625).abs() < 1e-12);
        let same = marginal_benefit_ratio(&full, &full, 1e-12).unwrap();
        assert!(same.ratios.iter().flatten().all(|r| (r - 1.0).abs() < 1e-12));
        let flat = RiskCurve::from_means("flat", 4, 64, ns.clone(), vec![0.0; 5], vec![0.3; 5]).unwrap();
        assert!(marginal_benefit_ratio(&full, &flat, 1e-12).unwrap().ratios.iter().flatten().all(|r| *r == 0.0));
        assert_eq!(marginal_benefit_ratio(&flat, &full, 1e-12), Err(Error::DivisionDegenerate));
    }

    #[test]
    fn histogram_cases() {
        let z = delta_histogram(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 5).unwrap();
        assert_eq!(z.std, 0.0);
        assert_eq!(z.histogram.counts[z.zero_bin], 3);
        let mut r = rng::from_seed(100);
        let inc = rng::gaussian_vec(&mut r, 100_000);
        let s = increment_stats(inc, 41).unwrap();
        assert!((0.99..=1.01).contains(&s.std));
        assert!((-0.05..=0.05).contains(&s.excess_kurtosis));
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 100_000);
        assert!(delta_histogram(&[0.0], &[0.0, 1.0], 5).is_err());
        assert!(increment_stats(vec![1.0], 2).is_err());
    }

    #[test]
    fn full_space_peft_tracks_fft_curve() {
        let mut cfg = TaskConfig::noisy_linear(6, 0.3, 8);
        cfg.pool_size = 200;
        cfg.test_size = 500;
        let task = generate_task(&cfg).unwrap();
        let net0 = StudentConfig::linear(4).build(6, 1).unwrap();
        let grid = [20, 40, 80, 160];
        let training = Training::default();
        let fft = risk_curve(&task, &net0, &Method::Fft, &grid, 10, &training, 1, &Sequential).unwrap();
        let peft = risk_curve(&task, &net0, &Method::Peft { map: MapSpec::Subspace { k: 6, seed: 2 } }, &grid, 10, &training, 1, &Sequential).unwrap();
        for i in 0..grid.len() {
            let ci = MeanCi::paired(&peft.test_risks_at(i), &fft.test_risks_at(i));
            assert!(ci.contains(0.0, 1e-10), "{ci:?}");
        }
        let part = risk_curve(&task, &net0, &Method::Peft { map: MapSpec::Subspace { k: 2, seed: 2 } }, &grid, 10, &training, 1, &Sequential).unwrap();
        for i in 0..grid.len() {
            for (p, f) in part.train_risks_at(i).iter().zip(fft.train_risks_at(i)) {
                assert!(*p >= f - 1e-9);
            }
        }
        assert_eq!(fft.rows.len(), 40);
    }

    #[test]
    fn small_study_reports_comparisons() {
        let mut cfg = ScalingStudyConfig::default();
        cfg.task = TaskConfig::noisy_linear(4, 0.3, 2);
        cfg.task.pool_size = 200;
        cfg.task.test_size = 400;
        cfg.methods = vec![Method::Peft { map: MapSpec::Subspace { k: 4, seed: 1 } }, Method::Peft { map: MapSpec::Subspace { k: 2, seed: 1 } }];
        cfg.n_grid = vec![10, 20, 40, 80];
        cfg.trials = 5;
        let rep = scaling_study(&cfg, 3, &Sequential).unwrap();
        assert!((rep.constructed_fit.exponent + 0.5).abs() < 1e-12);
        assert!(rep.comparisons[0].matches_fft(1e-10));
        assert!(rep.comparisons.iter().all(|c| c.nesting_violations == 0 && c.nesting_checked == 20));
        assert_eq!(rep.peft.len(), 2);
    }

    #[test]
    fn misaligned_subspace_has_higher_floor() {
        // Teacher depends on the first input only through weights the
        // subspace cannot reach.
        let mut cfg = TaskConfig::noisy_linear(4, 0.1, 9);
        cfg.pool_size = 400;
        cfg.test_size = 1000;
        let task = generate_task(&cfg).unwrap();
        let net0 = DenseNet::new(vec![crate::netcore::Layer::new(crate::Matrix::zeros(1, 4), None, Activation::Identity).unwrap()]).unwrap();
        let w = task.teacher.params();
        let imax = (0..4).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap();
        let others: Vec<usize> = (0..4).filter(|&i| i != imax).collect();
        let map = ReparamMap::bitfit(4, others).unwrap();
        let training = Training::default();
        let f = fit(&net0, None, LossKind::SquaredError, &task.train_pool, &training, 0).unwrap();
        let p = fit(&net0, Some(&map), LossKind::SquaredError, &task.train_pool, &training, 0).unwrap();
        let tf = netcore::loss(&f.net, LossKind::SquaredError, &task.test).unwrap();
        let tp = netcore::loss(&p.net, LossKind::SquaredError, &task.test).unwrap();
        assert!(tp > tf + 0.01, "{tp} vs {tf}");
    }

    #[test]
    fn increments_fft_wider_than_rank_one() {
        let rep = increment_study(&increment_task_config(), 5, 21, 3, &Sequential).unwrap();
        assert_eq!(rep.trials.len(), 5);
        assert!(rep.fft_wider_count >= 4);
    }
}
