//! Locally weighted ensemble Kalman methods.
//!
//! An [`Ensemble`] of particles with cached forward evaluations is the central
//! value. Kernels turn an anchor point into a weight vector over the particles,
//! the weights give local means and covariances, and those give derivative
//! approximations and particle dynamics for inversion and filtering.

pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod local_approx;
pub mod maps;
pub mod moments;
pub mod oracles;

pub use error::{Error, Result};
pub use kernels::{compute_weights, kernel_eval, KernelKind, KernelSpec, WeightVector};
pub use maps::ForwardMap;
pub use moments::{global_moments, local_moments, Ensemble, GlobalMoments, LocalMoments};
