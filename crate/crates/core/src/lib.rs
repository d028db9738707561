//! Numerical core of peftlab.
//!
//! Parameter-efficient fine-tuning is modelled as a reparameterization
//! `theta = theta0 + g(phi)` of a small dense network. The crate provides the
//! dense kernels (SVD, pseudo-inverse, symmetric eigensolver), exact
//! derivatives of small feedforward networks, the reparameterization maps,
//! an ERM trainer, and one verifier module per geometric or statistical
//! property that is checked on those objects.
//!
//! Everything here is `no_std` + `alloc` and deterministic: all randomness
//! flows from explicit seeds through [`rng`], and transcendental functions
//! come from `libm` so results do not depend on the host math library.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod netcore;
pub mod numerics;
pub mod perturbation;
pub mod reparam;
pub mod rng;
pub mod runner;
pub mod scaling;
pub mod stats;
pub mod trainer;
pub mod truncation;

pub use error::{Error, Result};
pub use netcore::{Activation, DenseNet, Layer, LossKind, Sample};
pub use numerics::Matrix;
pub use reparam::{MapKind, MapSpec, ReparamMap};
pub use runner::{Sequential, TrialRunner};
