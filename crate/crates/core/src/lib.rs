//! Saddle-point search with a Gaussian-process surrogate and gentlest ascent
//! dynamics (GAD), where the true model is only queried at locations chosen
//! by a mutual-information active-learning criterion.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`] - squared-exponential kernel and its derivative blocks;
//! * [`gpr`] - surrogate fitting, derivative posteriors, marginal-likelihood
//!   training, field sampling and the batch-only variance approximation;
//! * [`gad`] - the single-direction GAD integrator and the drivers
//!   (reference GAD and the active-learning loop);
//! * [`design`] - prior path sampling, the path-entropy utility and SPSA;
//! * [`problems`] - the analytic benchmarks and a critical-point oracle;
//! * [`experiment`] - config-driven runs and report/table files.

pub mod design;
pub mod error;
pub mod experiment;
pub mod gad;
pub mod gpr;
pub mod kernel;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
pub use kernel::KernelParams;

/// Points, directions and force vectors.
pub type Vector = nalgebra::DVector<f64>;
/// Jacobians, Hessians and Gram matrices.
pub type Matrix = nalgebra::DMatrix<f64>;
