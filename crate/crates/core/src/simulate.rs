//! Euler-Maruyama integration with burn-in and gap sampling.

use crate::model::SdeModel;
use crate::prelude::*;
use crate::rng::{spawn_stream, Stream};
use crate::{Error, Result};

/// Time stepping and sampling schedule shared by all Monte Carlo stages.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub dt: f64,
    /// Discarded integration time before recording starts.
    pub t_burn: f64,
    /// Interval between recorded slices; an integer multiple of `dt`.
    pub t_gap: f64,
    /// Number of recorded slices.
    pub n_t: usize,
    pub seed: u64,
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if !(r.is_finite() && k >= 0.0 && (r - k).abs() <= 1e-9 * k.max(1.0)) {
        return Err(Error::Config(format!(
            "{what} = {num} is not an integer multiple of dt = {den}"
        )));
    }
    Ok(k as usize)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_burn >= 0.0 && self.t_burn.is_finite()) {
            return Err(Error::Config(format!("t_burn must be >= 0, got {}", self.t_burn)));
        }
        if self.n_t < 2 {
            return Err(Error::Config(format!("n_t must be >= 2, got {}", self.n_t)));
        }
        if integer_ratio(self.t_gap, self.dt, "t_gap")? == 0 {
            return Err(Error::Config("t_gap must be at least one step".into()));
        }
        integer_ratio(self.t_burn, self.dt, "t_burn")?;
        Ok(())
    }

    /// Steps between recorded slices.
    pub fn gap_steps(&self) -> usize {
        (self.t_gap / self.dt).round() as usize
    }

    pub fn burn_steps(&self) -> usize {
        (self.t_burn / self.dt).round() as usize
    }

    /// Recorded times relative to the end of burn-in: `(k + 1) t_gap`.
    pub fn times(&self) -> Vec<f64> {
        let h = self.gap_steps() as f64 * self.dt;
        (1..=self.n_t).map(|k| k as f64 * h).collect()
    }
}

/// One Euler-Maruyama step, `x + f(x) dt + g(x) sqrt(dt) noise`.
pub fn step<M: SdeModel + ?Sized>(model: &M, x: &[f64], dt: f64, noise: &[f64]) -> Vec<f64> {
    let n = model.dim();
    let mut f = vec![0.0; n];
    let mut gw = vec![0.0; n];
    model.drift_and_noise(x, noise, &mut f, &mut gw);
    let s = dt.sqrt();
    (0..n).map(|i| x[i] + f[i] * dt + gw[i] * s).collect()
}

/// Reusable buffers for stepping one trajectory at a time.
pub struct Stepper<'a, M: ?Sized> {
    model: &'a M,
    dt: f64,
    sqrt_dt: f64,
    f: Vec<f64>,
    gw: Vec<f64>,
    noise: Vec<f64>,
}

impl<'a, M: SdeModel + ?Sized> Stepper<'a, M> {
    pub fn new(model: &'a M, dt: f64) -> Self {
        Self {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            f: vec![0.0; model.dim()],
            gw: vec![0.0; model.dim()],
            noise: vec![0.0; model.noise_dim()],
        }
    }

    /// Advances `x` by `steps` steps. Returns false once the state is non-finite.
    pub fn advance(&mut self, x: &mut [f64], steps: usize, rng: &mut Stream) -> bool {
        for _ in 0..steps {
            rng.fill_normal(&mut self.noise);
            self.model.drift_and_noise(x, &self.noise, &mut self.f, &mut self.gw);
            for ((xi, fi), gi) in x.iter_mut().zip(&self.f).zip(&self.gw) {
                *xi += fi * self.dt + gi * self.sqrt_dt;
            }
        }
        x.iter().all(|v| v.is_finite())
    }
}

/// Slice index at which a trajectory was found non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged {
    pub slice: usize,
}

/// Integrates from `x`, optionally burning in first, and calls `visit(k, state)`
/// at each of the `cfg.n_t` recorded slices. `x` holds the final state.
pub fn walk<M, F>(
    model: &M,
    cfg: &SimConfig,
    x: &mut [f64],
    burn_in: bool,
    rng: &mut Stream,
    mut visit: F,
) -> Result<(), Diverged>
where
    M: SdeModel + ?Sized,
    F: FnMut(usize, &[f64]),
{
    let mut stepper = Stepper::new(model, cfg.dt);
    if burn_in && !stepper.advance(x, cfg.burn_steps(), rng) {
        return Err(Diverged { slice: 0 });
    }
    let gap = cfg.gap_steps();
    for k in 0..cfg.n_t {
        if !stepper.advance(x, gap, rng) {
            return Err(Diverged { slice: k });
        }
        visit(k, x);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// Times relative to the end of burn-in.
    pub times: Vec<f64>,
    /// Recorded states, one row per slice.
    pub states: Vec<Vec<f64>>,
    /// Slice where the trajectory became non-finite; `states` stops there.
    pub diverged_at: Option<usize>,
}

/// Burn-in followed by `n_t` recorded slices on stream `(cfg.seed, 0)`.
pub fn run_trajectory<M: SdeModel + ?Sized>(
    model: &M,
    cfg: &SimConfig,
    x0: &[f64],
) -> Result<TrajectorySample> {
    run_trajectory_on(model, cfg, x0, &mut spawn_stream(cfg.seed, 0))
}

pub fn run_trajectory_on<M: SdeModel + ?Sized>(
    model: &M,
    cfg: &SimConfig,
    x0: &[f64],
    rng: &mut Stream,
) -> Result<TrajectorySample> {
    cfg.validate()?;
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x0.len(),
            context: "initial state",
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(cfg.n_t);
    let res = walk(model, cfg, &mut x, true, rng, |_, s| states.push(s.to_vec()));
    let mut times = cfg.times();
    times.truncate(states.len());
    Ok(TrajectorySample {
        times,
        states,
        diverged_at: res.err().map(|d| d.slice),
    })
}

/// Running count of trajectories and how many of them diverged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DivergenceTally {
    pub total: u64,
    pub diverged: u64,
}

impl DivergenceTally {
    /// Largest tolerated diverged fraction.
    pub const MAX_FRACTION: f64 = 1e-3;

    pub fn record(&mut self, diverged: bool) {
        self.total += 1;
        self.diverged += diverged as u64;
    }

    pub fn merge(&mut self, other: &Self) {
        self.total += other.total;
        self.diverged += other.diverged;
    }

    pub fn check(&self) -> Result<()> {
        if self.diverged as f64 > Self::MAX_FRACTION * self.total as f64 {
            Err(Error::Divergence {
                diverged: self.diverged,
                total: self.total,
            })
        } else {
            Ok(())
        }
    }
}
