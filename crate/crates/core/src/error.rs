use alloc::boxed::Box;
use alloc::string::String;

use crate::geometry::CapacityCounterexample;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("iterative kernel did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
    #[error("rank {rank} outside 0..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("numerically rank deficient: rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter count {d} exceeds the dense Hessian cap of {cap}")]
    TooLarge { d: usize, cap: usize },
    #[error("operation requires a linear reparameterization map")]
    NotLinear,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("not converged: gradient norm {grad_norm:e} above tolerance {tol:e}")]
    NotConverged { grad_norm: f64, tol: f64 },
    #[error("network has biases; the capacity bound is stated for bias-free layers")]
    BiasedNet,
    #[error("capacity bound violated: deviation {} > bound {}", .0.deviation, .0.bound)]
    BoundViolated(Box<CapacityCounterexample>),
    #[error("matrix not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("marginal benefit undefined: FFT risk reduction below noise floor everywhere")]
    DivisionDegenerate,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
