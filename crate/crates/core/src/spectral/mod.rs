//! Eigenvalue fits on decaying-oscillation traces and per-point
//! least-squares recovery of eigenfunction values.

mod decay_fit;
mod lemma;
mod lsq;
pub mod nelder_mead;
mod phase;

pub use decay_fit::{
    aggregate_eigenvalue, fit_eigenvalue, parabolic_spectrum, Averaging, DecayFit, DecayFitOptions,
    DecayFitParams, FitFailure, MIN_WINDOW,
};
pub use lemma::{lemma_error_scan, LemmaGenerator, ScanPoint};
pub use lsq::{rescale_biorthonormal, solve_eigenfunction_lsq, Baseline, LsqOptions, WEIGHT_CAP};
pub use phase::{binned_winding, winding_number};

use crate::prelude::*;
use crate::{Complex64, Error, Kind, Result};

/// Half-open range `[start, end)` of time-slice indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceWindow {
    pub start: usize,
    pub end: usize,
}

impl SliceWindow {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn all(n: usize) -> Self {
        Self { start: 0, end: n }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, n_t: usize) -> Result<()> {
        if self.start >= self.end || self.end > n_t {
            return Err(Error::Config(format!(
                "slice window [{}, {}) does not fit in {n_t} slices",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Eigenvalues and per-point eigenfunction values recovered by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenEstimate {
    pub kind: Kind,
    pub eigenvalues: Vec<Complex64>,
    /// Row-major `n_x x M`: row `i` holds every mode at training point `i`.
    pub values: Vec<Complex64>,
    /// Window times `(t_s, t_f)`.
    pub window: (f64, f64),
    /// Least-squares residual norm per point.
    pub residuals: Vec<f64>,
}

impl EigenEstimate {
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn value(&self, i: usize, mode: usize) -> Complex64 {
        self.values[i * self.modes() + mode]
    }

    /// Values of one mode at every point.
    pub fn mode(&self, mode: usize) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.value(i, mode)).collect()
    }
}
