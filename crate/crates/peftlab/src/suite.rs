//! One entry per verifier: run it, decide its status, and lay out its
//! tables. Assertable and measured-only sections are fixed here.

use peftlab_core::geometry::{capacity_suite, subspace_suite, CapacityBoundReport, BOUND_SLACK};
use peftlab_core::perturbation::{robustness_experiment, verify_perturbation};
use peftlab_core::rng::derive_seed;
use peftlab_core::scaling::{increment_study, scaling_study, Method};
use peftlab_core::truncation::truncation_suite;
use peftlab_core::TrialRunner;
use serde_json::json;

use crate::config::Resolved;
use crate::formats::NetFile;
use crate::report::{Attachment, Section, Status, Table};

/// Band the FFT generalization-gap exponent is compared against.
pub const EXPONENT_BAND: (f64, f64) = (-0.65, -0.35);
pub const MIN_R_SQUARED: f64 = 0.9;
/// Absolute widening of the paired CI when comparing identical hypothesis spaces.
pub const IDENTICAL_SPACE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verifier {
    Subspace,
    Capacity,
    Truncation,
    Perturbation,
    Robustness,
    Scaling,
    DistStats,
}

impl Verifier {
    pub const ALL: [Verifier; 7] = [
        Verifier::Subspace,
        Verifier::Capacity,
        Verifier::Truncation,
        Verifier::Perturbation,
        Verifier::Robustness,
        Verifier::Scaling,
        Verifier::DistStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verifier::Subspace => "subspace",
            Verifier::Capacity => "capacity",
            Verifier::Truncation => "truncation",
            Verifier::Perturbation => "perturbation",
            Verifier::Robustness => "robustness",
            Verifier::Scaling => "scaling",
            Verifier::DistStats => "dist-stats",
        }
    }
}

#[derive(Debug, Default)]
pub struct Output {
    pub sections: Vec<Section>,
    pub tables: Vec<Table>,
    pub attachments: Vec<Attachment>,
}

impl Output {
    fn merge(&mut self, other: Output) {
        self.sections.extend(other.sections);
        self.tables.extend(other.tables);
        self.attachments.extend(other.attachments);
    }
}

/// Shortest round-trip decimal form, with exponent for very small or large values.
pub fn num(v: f64) -> String {
    match serde_json::Number::from_f64(v) {
        Some(n) => n.to_string(),
        None => v.to_string(),
    }
}

fn attach_tables(section: &mut Section, tables: &[Table]) {
    section.artifacts.extend(tables.iter().map(|t| t.file.clone()));
}

/// Runs one verifier. Configuration errors come back as `Err`; any other
/// failure is recorded as a failed section.
pub fn run_verifier<R: TrialRunner>(v: Verifier, cfg: &Resolved, runner: &R) -> Result<Output, peftlab_core::Error> {
    let seed = derive_seed(cfg.seed, 0, v.name());
    let out = match v {
        Verifier::Subspace => subspace(cfg, seed, runner),
        Verifier::Capacity => capacity(cfg, seed, runner),
        Verifier::Truncation => truncation(cfg, seed, runner),
        Verifier::Perturbation => perturbation(cfg, seed, runner),
        Verifier::Robustness => robustness(cfg, seed, runner),
        Verifier::Scaling => scaling(cfg, seed, runner),
        Verifier::DistStats => dist_stats(cfg, seed, runner),
    };
    match out {
        Ok(o) => Ok(o),
        Err(e @ peftlab_core::Error::ConfigInvalid(_)) => Err(e),
        Err(e) => Ok(Output { sections: vec![Section::failed(v.name(), e)], ..Default::default() }),
    }
}

pub fn run_all<R: TrialRunner>(vs: &[Verifier], cfg: &Resolved, runner: &R) -> Result<Output, peftlab_core::Error> {
    let mut out = Output::default();
    for &v in vs {
        out.merge(run_verifier(v, cfg, runner)?);
    }
    Ok(out)
}

type R<T> = Result<T, peftlab_core::Error>;

fn subspace<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let rep = subspace_suite(&cfg.subspace, seed, runner)?;
    let mut t = Table::new("subspace_kinds.csv", &["kind", "d", "k", "rank", "rank_of", "min_residual", "passed"]);
    for k in &rep.kinds {
        t.push(vec![
            k.kind.name().into(),
            k.d.to_string(),
            k.k.to_string(),
            k.rank.to_string(),
            k.rank_of.clone(),
            k.min_residual.map(num).unwrap_or_default(),
            k.passed.to_string(),
        ]);
    }
    let mut s = Section::new("subspace", Status::from_check(rep.passed()))
        .metric("kinds_passed", rep.kinds.iter().filter(|k| k.passed).count())
        .metric("kinds", rep.kinds.len())
        .metric("gaussian_min_residual", rep.gaussian.min_residual)
        .metric("gaussian_samples", rep.gaussian.residual_samples.len())
        .metric("forward_mismatches", rep.forward_mismatches)
        .details(&rep);
    let tables = vec![t];
    attach_tables(&mut s, &tables);
    Ok(Output { sections: vec![s], tables, attachments: Vec::new() })
}

fn capacity_table(rep: &CapacityBoundReport) -> Table {
    let mut t = Table::new("capacity.csv", &["trial", "depth", "d", "kind", "k", "m", "l", "deviation", "bound", "ratio", "violated"]);
    for tr in &rep.trials {
        t.push(vec![
            tr.trial.to_string(),
            tr.depth.to_string(),
            tr.d.to_string(),
            tr.kind.name().into(),
            tr.k.to_string(),
            num(tr.m),
            num(tr.l),
            num(tr.deviation),
            num(tr.bound),
            num(tr.ratio()),
            tr.violated.to_string(),
        ]);
    }
    t
}

fn capacity<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let c = &cfg.capacity;
    let rep = capacity_suite(&c.nets, &c.maps, c.trials, seed, c.bound_scale, runner)?;
    let tight_ok = (rep.tightness.ratio - 1.0).abs() <= 1e-9;
    let expansive: Vec<_> = rep.sensitivity.iter().filter(|s| s.expansive).collect();
    let contractive: Vec<_> = rep.sensitivity.iter().filter(|s| !s.expansive).collect();
    let mut s = Section::new("capacity", Status::from_check(rep.violations == 0 && tight_ok))
        .metric("trials", rep.trials.len())
        .metric("violations", rep.violations)
        .metric("max_ratio", rep.max_ratio)
        .metric("tightness_ratio", rep.tightness.ratio)
        .metric("bound_scale", rep.bound_scale)
        .metric("slack", BOUND_SLACK)
        .metric("expansive_trials", expansive.len())
        .metric("expansive_later_layers_no_larger", expansive.iter().filter(|s| s.later_layers_no_larger).count())
        .metric("contractive_trials", contractive.len())
        .metric("contractive_later_layers_no_larger", contractive.iter().filter(|s| s.later_layers_no_larger).count())
        .details(&rep);
    let tables = vec![capacity_table(&rep)];
    attach_tables(&mut s, &tables);
    let mut attachments = Vec::new();
    if let Some(cx) = &rep.counterexample {
        let body = json!({
            "trial": cx.trial,
            "net": NetFile::from_net(&cx.net),
            "map": cx.map,
            "phi": cx.phi,
            "x": cx.x,
            "deviation": cx.deviation,
            "bound": cx.bound,
        });
        s.error = Some(format!(
            "capacity bound violated on trial {}: deviation {} > bound {} (see counterexample.json)",
            cx.trial,
            num(cx.deviation),
            num(cx.bound)
        ));
        s.artifacts.push("counterexample.json".into());
        attachments.push(Attachment { file: "counterexample.json".into(), body });
    }
    Ok(Output { sections: vec![s], tables, attachments })
}

fn truncation<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let rep = truncation_suite(&cfg.truncation, seed, runner)?;
    let c = &rep.curve;
    let mut t = Table::new("truncation.csv", &["rank", "test_loss", "frob_error", "tail_energy", "sqrt_r_over_N"]);
    for i in 0..c.ranks.len() {
        t.push(vec![
            c.ranks[i].to_string(),
            num(c.test_losses[i]),
            num(c.frob_errors[i]),
            num(c.tail_energies[i]),
            num(c.bound_terms[i].sqrt_r_over_n),
        ]);
    }
    let mut trace = Table::new("truncation_trace.csv", &["step", "loss"]);
    for (i, l) in rep.ideal_losses.iter().enumerate() {
        trace.push(vec![i.to_string(), num(*l)]);
    }
    let mut s = Section::new("truncation", Status::from_check(rep.passed()))
        .metric("eckart_young_max", rep.eckart_young_max)
        .metric("r_c_estimate", c.r_c_estimate)
        .metric("teacher_rank", rep.teacher_rank)
        .metric("plateau_gap", rep.plateau_gap)
        .metric("below_rank_excess", rep.below_rank_excess)
        .metric("fft_mismatch", rep.fft_mismatch)
        .metric("ideal_grad_norm", rep.ideal_grad_norm)
        .metric("loss_lipschitz", c.loss_lipschitz)
        .details(&rep);
    let tables = vec![t, trace];
    attach_tables(&mut s, &tables);
    Ok(Output { sections: vec![s], tables, attachments: Vec::new() })
}

fn perturbation<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let rep = verify_perturbation(&cfg.perturbation, seed, runner)?;
    let mut t = Table::new("perturbation.csv", &["trial", "d", "k", "gap", "psd_min_eig", "headline_difference", "degeneration_error"]);
    for c in &rep.instances {
        t.push(vec![
            c.trial.to_string(),
            c.d.to_string(),
            c.k.to_string(),
            num(c.gap),
            num(c.psd_min_eig),
            num(c.headline_difference),
            num(c.degeneration_error),
        ]);
    }
    let mut taylor = Table::new("taylor.csv", &["net", "step_large", "step_small", "residual_large", "residual_small", "exponent"]);
    for (i, ts) in rep.taylor.iter().enumerate() {
        taylor.push(vec![i.to_string(), num(ts.step_large), num(ts.step_small), num(ts.residual_large), num(ts.residual_small), num(ts.exponent)]);
    }
    let exps: Vec<f64> = rep.taylor.iter().map(|t| t.exponent).collect();
    let mut s = Section::new("perturbation", Status::from_check(rep.passed()))
        .metric("instances", rep.instances.len())
        .metric("min_gap", rep.min_gap)
        .metric("gap_violations", rep.gap_violations)
        .metric("min_psd_eig", rep.min_psd_eig)
        .metric("psd_violations", rep.psd_violations)
        .metric("max_degeneration_error", rep.max_degeneration_error)
        .metric("taylor_exponent_min", exps.iter().copied().fold(f64::INFINITY, f64::min))
        .metric("taylor_exponent_max", exps.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .metric("worked_delta_full", rep.worked.delta_l_full)
        .metric("worked_delta_peft", rep.worked.delta_l_peft)
        .metric("worked_gap", rep.worked.gap)
        .details(json!({
            "instances": rep.instances,
            "worked": rep.worked,
            "taylor": rep.taylor,
            "taylor_in_band": rep.taylor_in_band,
            "quadratic_probe_residual": rep.quadratic_probe_residual,
        }));
    let tables = vec![t, taylor];
    attach_tables(&mut s, &tables);
    let ex = &rep.net_example;
    let sign = Section::new("perturbation-sign", Status::MeasuredOnly)
        .metric("headline_positive", rep.headline_positive)
        .metric("instances", rep.instances.len())
        .metric("worked_headline_difference", rep.worked.delta_l_peft - rep.worked.delta_l_full)
        .metric("net_headline_difference", ex.headline_difference)
        .metric("net_cross_term", ex.cross_term)
        .metric("net_perpendicular_term", ex.perpendicular_term)
        .metric("net_perpendicular_rewritten", ex.perpendicular_rewritten)
        .metric("net_regularization", ex.regularization)
        .metric("net_hessian_min_eig", peftlab_core::numerics::sym_eigen(&ex.h.hessian).ok().map(|e| e.min()))
        .details(ex);
    Ok(Output { sections: vec![s, sign], tables, attachments: Vec::new() })
}

fn robustness<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let rep = robustness_experiment(&cfg.robustness, seed, runner)?;
    let mut t = Table::new("robustness.csv", &["method", "noise_scale", "clean", "perturbed", "degradation", "trial"]);
    for r in &rep.rows {
        t.push(vec![r.method.clone(), num(r.noise_scale), num(r.clean), num(r.perturbed), num(r.degradation), r.trial.to_string()]);
    }
    let mut s = Section::new("robustness", Status::MeasuredOnly);
    for r in &rep.results {
        s = s.metric(&format!("degradation[{}, {}]", r.method, num(r.noise_scale)), r.degradation.mean);
        if let Some(ci) = r.vs_fft {
            s = s.metric(&format!("vs_fft[{}, {}]", r.method, num(r.noise_scale)), [ci.lo, ci.hi]);
        }
    }
    s = s.metric("excluded", rep.results.iter().map(|r| r.excluded).sum::<usize>()).details(&rep.results);
    let tables = vec![t];
    attach_tables(&mut s, &tables);
    Ok(Output { sections: vec![s], tables, attachments: Vec::new() })
}

fn scaling<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let rep = scaling_study(&cfg.scaling, seed, runner)?;
    let mut t = Table::new("scaling.csv", &["method", "N", "trial", "train_risk", "test_risk"]);
    for curve in std::iter::once(&rep.fft).chain(&rep.peft) {
        for r in &curve.rows {
            t.push(vec![curve.method.clone(), r.n.to_string(), r.trial.to_string(), num(r.train_risk), num(r.test_risk)]);
        }
    }
    let constructed_error = (rep.constructed_fit.exponent + 0.5).abs();
    let nesting: usize = rep.comparisons.iter().map(|c| c.nesting_violations).sum();
    let full_space: Vec<_> = rep.comparisons.iter().filter(|c| c.k == c.d).collect();
    let full_match = full_space.iter().all(|c| c.matches_fft(IDENTICAL_SPACE_FLOOR));
    let not_converged = rep.fft.not_converged + rep.peft.iter().map(|c| c.not_converged).sum::<usize>();
    let ok = constructed_error <= 1e-12 && nesting == 0 && full_match && rep.negative_mean_gaps.is_empty();
    let mut s = Section::new("scaling", Status::from_check(ok))
        .metric("constructed_exponent_error", constructed_error)
        .metric("nesting_violations", nesting)
        .metric("full_space_curves", full_space.len())
        .metric("full_space_matches_fft", full_match)
        .metric("negative_mean_gaps", &rep.negative_mean_gaps)
        .metric("not_converged", not_converged)
        .details(&rep);
    let tables = vec![t];
    attach_tables(&mut s, &tables);

    let (lo, hi) = EXPONENT_BAND;
    let mut e = Section::new("scaling-exponent", Status::MeasuredOnly);
    match rep.fft_fit {
        Some(f) => {
            e = e
                .metric("fft_exponent", f.exponent)
                .metric("fft_r_squared", f.r_squared)
                .metric("band", [lo, hi])
                .metric("in_band", (lo..=hi).contains(&f.exponent) && f.r_squared >= MIN_R_SQUARED);
        }
        None => e = e.metric("fft_exponent", Option::<f64>::None),
    }
    for (c, curve) in rep.comparisons.iter().zip(&rep.peft) {
        e = e.metric(&format!("exponent[{}]", curve.method), curve.fitted_exponent);
        if let Some(m) = &c.marginal {
            e = e
                .metric(&format!("ratio_median[{}]", c.method), m.median)
                .metric(&format!("ratio_k_over_d[{}]", c.method), m.linear_model)
                .metric(&format!("ratio_sqrt_k_over_d[{}]", c.method), m.sqrt_model);
        }
    }
    let e = e.details(&rep.comparisons);
    Ok(Output { sections: vec![s, e], tables, attachments: Vec::new() })
}

fn dist_stats<T: TrialRunner>(cfg: &Resolved, seed: u64, runner: &T) -> R<Output> {
    let d = &cfg.dist_stats;
    let rep = increment_study(&d.teacher, d.trials, d.bins, seed, runner)?;
    let mut t = Table::new("dist_stats.csv", &["trial", "fft_std", "fft_kurtosis", "peft_std", "peft_kurtosis", "fft_wider"]);
    for r in &rep.trials {
        t.push(vec![r.trial.to_string(), num(r.fft_std), num(r.fft_kurtosis), num(r.peft_std), num(r.peft_kurtosis), r.fft_wider.to_string()]);
    }
    let mut h = Table::new("dist_histogram.csv", &["method", "bin_lo", "bin_hi", "count"]);
    for (method, stats) in [(Method::Fft.label(), &rep.example_fft), ("lora-linear-l0-r1".to_string(), &rep.example_peft)] {
        if let Some(st) = stats {
            for (i, c) in st.histogram.counts.iter().enumerate() {
                h.push(vec![method.clone(), num(st.histogram.edges[i]), num(st.histogram.edges[i + 1]), c.to_string()]);
            }
        }
    }
    let mut s = Section::new("dist-stats", Status::MeasuredOnly)
        .metric("fft_wider", rep.fft_wider_count)
        .metric("trials", rep.trials.len())
        .metric("required_wider", d.required_wider)
        .metric("direction_matches", rep.fft_wider_count >= d.required_wider)
        .metric("std_difference", [rep.std_difference.lo, rep.std_difference.mean, rep.std_difference.hi])
        .details(&rep.trials);
    let tables = vec![t, h];
    attach_tables(&mut s, &tables);
    Ok(Output { sections: vec![s], tables, attachments: Vec::new() })
}
