//! Estimation of the low-lying eigenpairs of the stochastic Koopman generator
//! and the Fokker-Planck operator of SDE-driven oscillators.
//!
//! The crate is `no_std` (with `alloc`). It covers the numerical pipeline end
//! to end:
//!
//! 1. [`simulate`]: Euler-Maruyama trajectories on counter-based random streams.
//! 2. [`collocation`]: sparse box grids, the training set and the reference set.
//! 3. [`density`]: Monte Carlo forward/backward transition density matrices.
//! 4. [`spectral`]: decaying-oscillation eigenvalue fits and per-point
//!    least-squares eigenfunction recovery.
//! 5. [`pinn`]: a two-output tanh network refined with an operator residual.
//!
//! [`fd`] holds a finite-difference reference solver for planar systems.
//! IO, file formats, parallel drivers and the CLI live in the `skoeig` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod collocation;
pub mod density;
mod error;
pub mod fd;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod pinn;
mod prelude;
pub mod rng;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Direction of a transition density or eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Kind {
    /// Fokker-Planck operator, densities evolving forward in time.
    Forward,
    /// Koopman generator, expectations of observables.
    Backward,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Forward => "forward",
            Kind::Backward => "backward",
        }
    }
}
