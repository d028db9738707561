//! Command-line harness for the peftlab verifiers: JSON configuration,
//! a rayon trial runner, and report/CSV persistence on top of
//! [`peftlab_core`].

pub mod cli;
pub mod config;
pub mod formats;
pub mod report;
pub mod runner;
pub mod suite;

pub use config::{ExperimentConfig, Resolved};
pub use report::{Section, Status, SuiteReport};
pub use runner::RayonRunner;
