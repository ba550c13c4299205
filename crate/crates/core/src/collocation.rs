//! Sparse box discretization of the computational rectangle and the
//! training (`X`) and reference (`Y`) collocation sets.

use crate::model::SdeModel;
use crate::prelude::*;
use crate::rng::{derive_seed, purpose, spawn_stream, Stream};
use crate::simulate::{SimConfig, Stepper};
use crate::{Error, Result};
use alloc::collections::BTreeSet;

/// `N` boxes per dimension over `[low_d, high_d)`. Box ids flatten the
/// multi-index with dimension 0 varying fastest.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxGrid {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub n_per_dim: usize,
}

impl BoxGrid {
    pub fn new(low: Vec<f64>, high: Vec<f64>, n_per_dim: usize) -> Result<Self> {
        let g = Self {
            low,
            high,
            n_per_dim,
        };
        g.validate()?;
        Ok(g)
    }

    /// Same bounds `[low, high)` in each of `dim` dimensions.
    pub fn cube(dim: usize, low: f64, high: f64, n_per_dim: usize) -> Result<Self> {
        Self::new(vec![low; dim], vec![high; dim], n_per_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.is_empty() || self.low.len() != self.high.len() {
            return Err(Error::Config("grid bounds must be non-empty and paired".into()));
        }
        if let Some(d) = (0..self.dim()).find(|&d| !(self.low[d] < self.high[d])) {
            return Err(Error::Config(format!("grid bounds in dimension {d} are empty")));
        }
        if self.n_per_dim == 0 {
            return Err(Error::Config("grid needs at least one box per dimension".into()));
        }
        if self.box_count().is_none() {
            return Err(Error::Config("box count overflows 64-bit ids".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        (self.high[d] - self.low[d]) / self.n_per_dim as f64
    }

    /// Box volume `delta`.
    pub fn box_volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).product()
    }

    /// Conceptual box count `N^n`, if it fits in 64 bits.
    pub fn box_count(&self) -> Option<u64> {
        (self.n_per_dim as u64).checked_pow(self.dim() as u32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (lo, hi))| *v >= *lo && *v < *hi)
    }

    /// Id of the half-open box containing `x`, `None` outside the grid.
    #[inline]
    pub fn locate(&self, x: &[f64]) -> Option<u64> {
        let n = self.n_per_dim as u64;
        let mut id = 0u64;
        let mut stride = 1u64;
        for d in 0..self.dim() {
            let v = x[d];
            if !(v >= self.low[d] && v < self.high[d]) {
                return None;
            }
            let i = (((v - self.low[d]) / self.width(d)) as u64).min(n - 1);
            id += i * stride;
            stride *= n;
        }
        Some(id)
    }

    pub fn multi_index(&self, id: u64) -> Vec<usize> {
        let n = self.n_per_dim as u64;
        let mut rest = id;
        (0..self.dim())
            .map(|_| {
                let i = rest % n;
                rest /= n;
                i as usize
            })
            .collect()
    }

    pub fn id_of(&self, index: &[usize]) -> u64 {
        let n = self.n_per_dim as u64;
        index
            .iter()
            .rev()
            .fold(0u64, |acc, &i| acc * n + i as u64)
    }

    pub fn center(&self, id: u64) -> Vec<f64> {
        self.multi_index(id)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.low[d] + (i as f64 + 0.5) * self.width(d))
            .collect()
    }

    /// Uniform point in box `id`.
    pub fn sample_in_box(&self, id: u64, rng: &mut Stream) -> Vec<f64> {
        self.multi_index(id)
            .iter()
            .enumerate()
            .map(|(d, &i)| {
                let lo = self.low[d] + i as f64 * self.width(d);
                rng.uniform_in(lo, lo + self.width(d))
            })
            .collect()
    }

    /// Uniform point in the whole rectangle.
    pub fn sample_uniform(&self, rng: &mut Stream) -> Vec<f64> {
        (0..self.dim())
            .map(|d| rng.uniform_in(self.low[d], self.high[d]))
            .collect()
    }
}

/// Axis-aligned region used for backward traces and forward trace sums.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ReferenceBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { low, high }
    }

    /// Checks positive volume and containment in the grid rectangle.
    pub fn validate(&self, grid: &BoxGrid) -> Result<()> {
        if self.low.len() != grid.dim() || self.high.len() != grid.dim() {
            return Err(Error::Dimension {
                expected: grid.dim(),
                got: self.low.len(),
                context: "reference box",
            });
        }
        for d in 0..grid.dim() {
            if !(self.low[d] < self.high[d]) {
                return Err(Error::Config(format!("reference box is empty in dimension {d}")));
            }
            if self.low[d] < grid.low[d] || self.high[d] > grid.high[d] {
                return Err(Error::Config(format!(
                    "reference box leaves the grid in dimension {d}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (lo, hi))| *v >= *lo && *v < *hi)
    }

    pub fn volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }
}

/// Training boxes `X` (sorted by id, stored as centers) and raw reference points `Y`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollocationSets {
    pub box_ids: Vec<u64>,
    pub training: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
}

impl CollocationSets {
    /// Position of `id` in the training set.
    pub fn position(&self, id: u64) -> Option<usize> {
        self.box_ids.binary_search(&id).ok()
    }
}

/// Trajectory samples taken every `t_gap` after burn-in, restarted from a
/// fresh uniform point if the path diverges.
struct SampleStream<'a, M: ?Sized> {
    stepper: Stepper<'a, M>,
    grid: &'a BoxGrid,
    burn: usize,
    gap: usize,
    x: Vec<f64>,
    rng: Stream,
    started: bool,
}

impl<'a, M: SdeModel + ?Sized> SampleStream<'a, M> {
    fn new(model: &'a M, grid: &'a BoxGrid, sim: &SimConfig, rng: Stream) -> Self {
        Self {
            stepper: Stepper::new(model, sim.dt),
            grid,
            burn: sim.burn_steps(),
            gap: sim.gap_steps(),
            x: Vec::new(),
            rng,
            started: false,
        }
    }

    fn next(&mut self) -> &[f64] {
        loop {
            if !self.started {
                self.x = self.grid.sample_uniform(&mut self.rng);
                self.started = self.stepper.advance(&mut self.x, self.burn, &mut self.rng);
                continue;
            }
            if self.stepper.advance(&mut self.x, self.gap, &mut self.rng) {
                return &self.x;
            }
            self.started = false;
        }
    }
}

/// Default trajectory/uniform sample budget, as a multiple of the set size.
pub const BUDGET_FACTOR: usize = 100;

fn ratio_count(alpha: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("ratio alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(((alpha * n as f64) - 1e-9).ceil().max(0.0) as usize)
}

/// Builds `X`: `ceil(alpha n_x)` boxes claimed by a burnt-in trajectory, the
/// rest by uniform draws over the rectangle, all distinct.
pub fn generate_training_set<M: SdeModel + ?Sized>(
    model: &M,
    grid: &BoxGrid,
    n_x: usize,
    alpha: f64,
    sim: &SimConfig,
    seed: u64,
) -> Result<CollocationSets> {
    generate_training_set_with_budget(model, grid, n_x, alpha, sim, seed, BUDGET_FACTOR)
}

pub fn generate_training_set_with_budget<M: SdeModel + ?Sized>(
    model: &M,
    grid: &BoxGrid,
    n_x: usize,
    alpha: f64,
    sim: &SimConfig,
    seed: u64,
    budget_factor: usize,
) -> Result<CollocationSets> {
    grid.validate()?;
    sim.validate()?;
    if grid.box_count().is_some_and(|c| (n_x as u64) > c) {
        return Err(Error::Config(format!(
            "n_x = {n_x} exceeds the {} boxes of the grid",
            grid.box_count().unwrap_or(0)
        )));
    }
    let n_traj = ratio_count(alpha, n_x)?;
    let budget = budget_factor.saturating_mul(n_x.max(1));
    let s = derive_seed(seed, purpose::TRAINING_SET);
    let mut claimed = BTreeSet::new();

    let mut path = SampleStream::new(model, grid, sim, spawn_stream(s, 0));
    let mut used = 0usize;
    while claimed.len() < n_traj {
        if used == budget {
            return Err(Error::Shortfall {
                what: "trajectory training boxes",
                requested: n_traj,
                collected: claimed.len(),
                budget,
            });
        }
        used += 1;
        if let Some(id) = grid.locate(path.next()) {
            claimed.insert(id);
        }
    }

    let mut rng = spawn_stream(s, 1);
    let mut used = 0usize;
    while claimed.len() < n_x {
        if used == budget {
            return Err(Error::Shortfall {
                what: "uniform training boxes",
                requested: n_x,
                collected: claimed.len(),
                budget,
            });
        }
        used += 1;
        if let Some(id) = grid.locate(&grid.sample_uniform(&mut rng)) {
            claimed.insert(id);
        }
    }

    let box_ids: Vec<u64> = claimed.into_iter().collect();
    let training = box_ids.iter().map(|&id| grid.center(id)).collect();
    Ok(CollocationSets {
        box_ids,
        training,
        reference: Vec::new(),
    })
}

/// Builds `Y`: `ceil(alpha n_y)` raw trajectory points inside the rectangle
/// followed by uniform draws. Duplicates are allowed and nothing is binned.
pub fn generate_reference_set<M: SdeModel + ?Sized>(
    grid: &BoxGrid,
    n_y: usize,
    alpha: f64,
    model: &M,
    sim: &SimConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    sim.validate()?;
    let n_traj = ratio_count(alpha, n_y)?;
    let budget = BUDGET_FACTOR.saturating_mul(n_y.max(1));
    let s = derive_seed(seed, purpose::REFERENCE_SET);
    let mut out = Vec::with_capacity(n_y);
    if n_traj > 0 {
        let mut path = SampleStream::new(model, grid, sim, spawn_stream(s, 0));
        let mut used = 0usize;
        while out.len() < n_traj {
            if used == budget {
                return Err(Error::Shortfall {
                    what: "trajectory reference points",
                    requested: n_traj,
                    collected: out.len(),
                    budget,
                });
            }
            used += 1;
            let x = path.next();
            if grid.contains(x) {
                out.push(x.to_vec());
            }
        }
    }
    let mut rng = spawn_stream(s, 1);
    while out.len() < n_y {
        out.push(grid.sample_uniform(&mut rng));
    }
    Ok(out)
}
