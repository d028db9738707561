//! `peftlab <subcommand> --config <path> --seed <u64> --out <dir> [--jobs <n>]`
//!
//! Exit codes: 0 when every assertable check passes, 1 when one fails,
//! 2 for usage or configuration errors.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, SCHEMA_VERSION};
use crate::report::{write_report, Status, SuiteReport};
use crate::runner::RayonRunner;
use crate::suite::{run_all, Verifier};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "peftlab", version, about = "Checks of PEFT-as-reparameterization properties on small exact models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; omitted blocks take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides any seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json, summary.md and CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, env = "PEFTLAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank of every map kind and Gaussian residuals to its span.
    VerifySubspace(Common),
    /// Randomized output-deviation bound suite.
    VerifyCapacity(Common),
    /// Rank truncation of an ideal update and the loss plateau.
    VerifyTruncation(Common),
    /// Quadratic-model perturbation deltas and subspace gaps.
    VerifyPerturbation(Common),
    /// Accuracy under input noise for FFT and PEFT (measured only).
    RobustnessExp(Common),
    /// Risk versus sample count, exponents and marginal ratios.
    ScalingStudy(Common),
    /// Increment distribution of FFT versus rank-1 LoRA (measured only).
    DistStats(Common),
    /// Every verifier, one combined report.
    FullSuite(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common, Vec<Verifier>) {
        use Command::*;
        match self {
            VerifySubspace(c) => ("verify-subspace", c, vec![Verifier::Subspace]),
            VerifyCapacity(c) => ("verify-capacity", c, vec![Verifier::Capacity]),
            VerifyTruncation(c) => ("verify-truncation", c, vec![Verifier::Truncation]),
            VerifyPerturbation(c) => ("verify-perturbation", c, vec![Verifier::Perturbation]),
            RobustnessExp(c) => ("robustness-exp", c, vec![Verifier::Robustness]),
            ScalingStudy(c) => ("scaling-study", c, vec![Verifier::Scaling]),
            DistStats(c) => ("dist-stats", c, vec![Verifier::DistStats]),
            FullSuite(c) => ("full-suite", c, Verifier::ALL.to_vec()),
        }
    }
}

pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match execute(&cli) {
        Ok(Status::Fail) => EXIT_FAIL,
        Ok(_) => EXIT_PASS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

enum Failure {
    Usage(String),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(format!("config: {e}"))
    }
}

fn execute(cli: &Cli) -> Result<Status, Failure> {
    let started = Instant::now();
    let (name, common, verifiers) = cli.command.parts();
    let doc = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = doc.resolve(common.seed)?;
    let jobs = match common.jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let runner = RayonRunner::new(jobs).map_err(|e| Failure::Other(e.into()))?;
    let out = run_all(&verifiers, &cfg, &runner).map_err(|e| Failure::Usage(e.to_string()))?;
    let status = SuiteReport::overall(&out.sections);
    let report = SuiteReport {
        schema_version: SCHEMA_VERSION.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        status,
        sections: out.sections,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_report(&report, &out.tables, &out.attachments, &common.out)
        .with_context(|| format!("writing reports to {}", common.out.display()))
        .map_err(Failure::Other)?;
    print!("{}", report.screen_summary());
    println!("reports written to {}", common.out.display());
    Ok(status)
}
