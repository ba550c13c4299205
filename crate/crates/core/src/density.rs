//! Monte Carlo transition densities: the forward matrix `D_F`, the backward
//! matrix `D_B`, and a long-run stationary histogram.
//!
//! Every estimator is split into a job (`run` over a range of trajectories or
//! start boxes, returning mergeable counts) and a `finish` step, so callers can
//! spread the work over threads and merge in a fixed order.

use crate::collocation::{BoxGrid, ReferenceBox};
use crate::model::SdeModel;
use crate::prelude::*;
use crate::rng::{derive_seed, purpose, spawn_stream};
use crate::simulate::{walk, DivergenceTally, SimConfig};
use crate::{Error, Kind, Result};
use alloc::collections::BTreeMap;
use core::ops::Range;

/// `N_t x N_x` matrix of density estimates, row `k` holding slice `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub kind: Kind,
    pub n_t: usize,
    pub n_x: usize,
    /// Row-major values.
    pub values: Vec<f64>,
    pub times: Vec<f64>,
    /// Trajectories launched per estimate (total for forward, per start box for backward).
    pub k: u64,
    /// Box volume.
    pub delta: f64,
    pub tally: DivergenceTally,
    /// Forward only: fraction of the `K` trajectories inside the reference
    /// box at each slice. Empty when no box was tracked.
    pub reference_mass: Vec<f64>,
}

impl DensityMatrix {
    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_x + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_x..(k + 1) * self.n_x]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_t).map(|k| self.get(k, i)).collect()
    }

    /// Largest violation of the kind's range invariant: forward slices hold
    /// at most unit mass, backward entries are probabilities.
    pub fn invariant_excess(&self) -> f64 {
        match self.kind {
            Kind::Forward => (0..self.n_t)
                .map(|k| self.row(k).iter().sum::<f64>() * self.delta - 1.0)
                .chain(self.values.iter().map(|v| -v))
                .fold(0.0f64, f64::max),
            Kind::Backward => self
                .values
                .iter()
                .map(|&v| (v - 1.0).max(-v))
                .fold(0.0f64, f64::max),
        }
    }
}

/// Binomial standard error of a proportion estimated from `k` samples.
pub fn binomial_standard_error(p: f64, k: u64) -> f64 {
    (p * (1.0 - p) / k as f64).sqrt()
}

/// 32-bit slot counters; a slot that would overflow is promoted to a 64-bit side table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Counts {
    small: Vec<u32>,
    big: BTreeMap<usize, u64>,
}

impl Counts {
    pub fn new(len: usize) -> Self {
        Self {
            small: vec![0; len],
            big: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.small.len()
    }

    pub fn is_empty(&self) -> bool {
        self.small.is_empty()
    }

    #[inline]
    pub fn add(&mut self, slot: usize, n: u64) {
        let cur = self.small[slot] as u64 + n;
        if cur <= u32::MAX as u64 {
            self.small[slot] = cur as u32;
        } else {
            self.small[slot] = 0;
            *self.big.entry(slot).or_insert(0) += cur;
        }
    }

    pub fn get(&self, slot: usize) -> u64 {
        self.small[slot] as u64 + self.big.get(&slot).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &Counts) {
        assert_eq!(self.len(), other.len(), "merging counts of different shapes");
        for (slot, &v) in other.small.iter().enumerate() {
            if v != 0 {
                self.add(slot, v as u64);
            }
        }
        for (&slot, &v) in &other.big {
            self.add(slot, v);
        }
    }
}

/// Counts gathered by a job over part of its work.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCounts {
    pub counts: Counts,
    pub tally: DivergenceTally,
}

impl PartialCounts {
    pub fn merge(&mut self, other: &PartialCounts) {
        self.counts.merge(&other.counts);
        self.tally.merge(&other.tally);
    }
}

fn check_ids(grid: &BoxGrid, ids: &[u64]) -> Result<()> {
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("training box ids must be sorted and distinct".into()));
    }
    if let (Some(&last), Some(count)) = (ids.last(), grid.box_count()) {
        if last >= count {
            return Err(Error::Config(format!("box id {last} is outside the grid")));
        }
    }
    Ok(())
}

/// Forward estimate: `K` trajectories from uniform points in the start box.
pub struct ForwardJob<'a, M: ?Sized> {
    pub model: &'a M,
    pub grid: &'a BoxGrid,
    /// Sorted training box ids.
    pub ids: &'a [u64],
    pub sim: &'a SimConfig,
    pub start_box: u64,
    /// Box whose occupancy is traced alongside the matrix.
    pub reference: Option<&'a ReferenceBox>,
}

impl<'a, M: SdeModel + ?Sized> ForwardJob<'a, M> {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        check_ids(self.grid, self.ids)?;
        if self.grid.box_count().is_some_and(|c| self.start_box >= c) {
            return Err(Error::Config(format!("start box {} is outside the grid", self.start_box)));
        }
        Ok(())
    }

    /// Trajectories with ids in `range`.
    pub fn run(&self, range: Range<u64>) -> PartialCounts {
        let n_x = self.ids.len();
        let n_t = self.sim.n_t;
        // reference-box occupancy goes in n_t trailing slots
        let mut counts = Counts::new(n_t * n_x + if self.reference.is_some() { n_t } else { 0 });
        let mut tally = DivergenceTally::default();
        let seed = derive_seed(self.sim.seed, purpose::FORWARD);
        for id in range {
            let mut rng = spawn_stream(seed, id);
            let mut x = self.grid.sample_in_box(self.start_box, &mut rng);
            let res = walk(self.model, self.sim, &mut x, false, &mut rng, |k, s| {
                if let Some(b) = self.grid.locate(s) {
                    if let Ok(pos) = self.ids.binary_search(&b) {
                        counts.add(k * n_x + pos, 1);
                    }
                }
                if self.reference.is_some_and(|r| r.contains(s)) {
                    counts.add(n_t * n_x + k, 1);
                }
            });
            tally.record(res.is_err());
        }
        PartialCounts { counts, tally }
    }

    /// `values[k][i] = count / (K delta)`.
    pub fn finish(&self, parts: PartialCounts, k: u64) -> Result<DensityMatrix> {
        parts.tally.check()?;
        let delta = self.grid.box_volume();
        let scale = 1.0 / (k as f64 * delta);
        let n_x = self.ids.len();
        let values = (0..self.sim.n_t * n_x)
            .map(|s| parts.counts.get(s) as f64 * scale)
            .collect();
        let reference_mass = match self.reference {
            Some(_) => (0..self.sim.n_t)
                .map(|j| parts.counts.get(self.sim.n_t * n_x + j) as f64 / k as f64)
                .collect(),
            None => Vec::new(),
        };
        Ok(DensityMatrix {
            reference_mass,
            kind: Kind::Forward,
            n_t: self.sim.n_t,
            n_x,
            values,
            times: self.sim.times(),
            k,
            delta,
            tally: parts.tally,
        })
    }
}

/// Serial forward estimate.
pub fn estimate_forward<M: SdeModel + ?Sized>(
    model: &M,
    grid: &BoxGrid,
    ids: &[u64],
    sim: &SimConfig,
    start_box: u64,
    reference: Option<&ReferenceBox>,
    k: u64,
) -> Result<DensityMatrix> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let job = ForwardJob {
        model,
        grid,
        ids,
        sim,
        start_box,
        reference,
    };
    job.validate()?;
    job.finish(job.run(0..k), k)
}

/// Backward estimate: `K` trajectories from each training box, counting
/// arrivals in the reference box.
pub struct BackwardJob<'a, M: ?Sized> {
    pub model: &'a M,
    pub grid: &'a BoxGrid,
    pub ids: &'a [u64],
    pub sim: &'a SimConfig,
    pub reference: &'a ReferenceBox,
    pub k: u64,
}

impl<'a, M: SdeModel + ?Sized> BackwardJob<'a, M> {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        check_ids(self.grid, self.ids)?;
        self.reference.validate(self.grid)?;
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }

    /// Start boxes at positions `range` of the training set. Counts are
    /// stored column-major (`position * n_t + k`) so ranges stay contiguous.
    pub fn run(&self, range: Range<usize>) -> PartialCounts {
        let n_t = self.sim.n_t;
        let mut counts = Counts::new(self.ids.len() * n_t);
        let mut tally = DivergenceTally::default();
        let base = derive_seed(self.sim.seed, purpose::BACKWARD);
        for pos in range {
            let box_id = self.ids[pos];
            let seed = derive_seed(base, box_id);
            let mut hits = vec![0u32; n_t];
            for j in 0..self.k {
                let mut rng = spawn_stream(seed, j);
                let mut x = self.grid.sample_in_box(box_id, &mut rng);
                let res = walk(self.model, self.sim, &mut x, false, &mut rng, |k, s| {
                    if self.reference.contains(s) {
                        hits[k] += 1;
                    }
                });
                tally.record(res.is_err());
            }
            for (k, &h) in hits.iter().enumerate() {
                counts.add(pos * n_t + k, h as u64);
            }
        }
        PartialCounts { counts, tally }
    }

    /// `values[k][i] = count / K`.
    pub fn finish(&self, parts: PartialCounts) -> Result<DensityMatrix> {
        parts.tally.check()?;
        let (n_t, n_x) = (self.sim.n_t, self.ids.len());
        let mut values = vec![0.0; n_t * n_x];
        for i in 0..n_x {
            for k in 0..n_t {
                values[k * n_x + i] = parts.counts.get(i * n_t + k) as f64 / self.k as f64;
            }
        }
        Ok(DensityMatrix {
            reference_mass: Vec::new(),
            kind: Kind::Backward,
            n_t,
            n_x,
            values,
            times: self.sim.times(),
            k: self.k,
            delta: self.grid.box_volume(),
            tally: parts.tally,
        })
    }
}

/// Serial backward estimate.
pub fn estimate_backward<M: SdeModel + ?Sized>(
    model: &M,
    grid: &BoxGrid,
    ids: &[u64],
    sim: &SimConfig,
    reference: &ReferenceBox,
    k: u64,
) -> Result<DensityMatrix> {
    let job = BackwardJob {
        model,
        grid,
        ids,
        sim,
        reference,
        k,
    };
    job.validate()?;
    job.finish(job.run(0..ids.len()))
}

/// Time-averaged occupancy histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEstimate {
    /// Sample count per visited box id.
    pub counts: BTreeMap<u64, u64>,
    /// Samples taken, inside the grid or not.
    pub total: u64,
    /// Samples inside the reference box, if one was given.
    pub in_reference: u64,
    pub delta: f64,
    pub tally: DivergenceTally,
}

impl StationaryEstimate {
    /// Estimated `P0` at box `id`.
    pub fn density(&self, id: u64) -> f64 {
        self.counts.get(&id).copied().unwrap_or(0) as f64 / (self.total as f64 * self.delta)
    }

    /// Fraction of samples that fell inside the grid.
    pub fn mass_in_grid(&self) -> f64 {
        self.counts.values().sum::<u64>() as f64 / self.total as f64
    }

    /// Estimated `P0` mass of the reference box.
    pub fn reference_mass(&self) -> f64 {
        self.in_reference as f64 / self.total as f64
    }

    pub fn merge(&mut self, other: &StationaryEstimate) {
        for (&id, &c) in &other.counts {
            *self.counts.entry(id).or_insert(0) += c;
        }
        self.total += other.total;
        self.in_reference += other.in_reference;
        self.tally.merge(&other.tally);
    }
}

/// Long-run histogram: each trajectory starts uniform in the grid, burns in
/// for `sim.t_burn`, then samples every `t_gap` until `t_long`.
pub struct StationaryJob<'a, M: ?Sized> {
    pub model: &'a M,
    pub grid: &'a BoxGrid,
    pub sim: &'a SimConfig,
    pub t_long: f64,
    pub reference: Option<&'a ReferenceBox>,
}

impl<'a, M: SdeModel + ?Sized> StationaryJob<'a, M> {
    fn config(&self) -> SimConfig {
        SimConfig {
            n_t: ((self.t_long / self.sim.t_gap).round() as usize).max(2),
            ..*self.sim
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config().validate()?;
        if let Some(r) = self.reference {
            r.validate(self.grid)?;
        }
        Ok(())
    }

    pub fn run(&self, range: Range<u64>) -> StationaryEstimate {
        let cfg = self.config();
        let seed = derive_seed(cfg.seed, purpose::STATIONARY);
        let mut est = StationaryEstimate {
            counts: BTreeMap::new(),
            total: 0,
            in_reference: 0,
            delta: self.grid.box_volume(),
            tally: DivergenceTally::default(),
        };
        for id in range {
            let mut rng = spawn_stream(seed, id);
            let mut x = self.grid.sample_uniform(&mut rng);
            let mut local = BTreeMap::new();
            let mut taken = 0u64;
            let mut in_ref = 0u64;
            let res = walk(self.model, &cfg, &mut x, true, &mut rng, |_, s| {
                taken += 1;
                if let Some(b) = self.grid.locate(s) {
                    *local.entry(b).or_insert(0u64) += 1;
                }
                if self.reference.is_some_and(|r| r.contains(s)) {
                    in_ref += 1;
                }
            });
            est.tally.record(res.is_err());
            if res.is_ok() {
                for (b, c) in local {
                    *est.counts.entry(b).or_insert(0) += c;
                }
                est.total += taken;
                est.in_reference += in_ref;
            }
        }
        est
    }

    pub fn finish(&self, est: StationaryEstimate) -> Result<StationaryEstimate> {
        est.tally.check()?;
        if est.total == 0 {
            return Err(Error::Config("stationary run produced no samples".into()));
        }
        Ok(est)
    }
}

pub fn estimate_stationary<M: SdeModel + ?Sized>(
    model: &M,
    grid: &BoxGrid,
    sim: &SimConfig,
    k: u64,
    t_long: f64,
    reference: Option<&ReferenceBox>,
) -> Result<StationaryEstimate> {
    let job = StationaryJob {
        model,
        grid,
        sim,
        t_long,
        reference,
    };
    job.validate()?;
    job.finish(job.run(0..k))
}
