//! Crank-Nicolson evolution of a density and a decay fit of a box-mass trace.

use super::FdOperator;
use crate::prelude::*;
use crate::spectral::{fit_eigenvalue, DecayFit, DecayFitOptions, SliceWindow};
use crate::{Error, Kind, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    pub dt: f64,
    /// Time between recorded slices; a multiple of `dt`.
    pub t_gap: f64,
    pub n_t: usize,
    /// Box whose mass is traced.
    pub region_low: Vec<f64>,
    pub region_high: Vec<f64>,
    /// Implicit Euler half-steps damping the startup of the trapezoidal rule.
    pub startup_half_steps: usize,
    /// Largest tolerated change of total mass per step.
    pub max_mass_step: f64,
    pub window: Option<SliceWindow>,
    pub fit: DecayFitOptions,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            t_gap: 0.1,
            n_t: 400,
            region_low: vec![-2.0, -2.0],
            region_high: vec![0.0, 0.0],
            startup_half_steps: 4,
            max_mass_step: 1e-6,
            window: None,
            fit: DecayFitOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub times: Vec<f64>,
    pub trace: Vec<f64>,
    pub fit: DecayFit,
    /// Step size actually used.
    pub dt: f64,
    /// Total mass change per unit time over the run.
    pub mass_drift_rate: f64,
}

fn total_mass(op: &FdOperator, rho: &[f64]) -> f64 {
    rho.iter().sum::<f64>() * op.grid.cell_volume()
}

/// Evolves `rho0` under `d rho/dt = A rho`, records the mass in the traced box
/// every `t_gap`, and fits a decaying oscillation to the trace.
pub fn evolve_and_fit(op: &FdOperator, rho0: &[f64], cfg: &EvolveConfig) -> Result<EvolveResult> {
    if op.kind != Kind::Forward {
        return Err(Error::Config("evolution needs the forward operator".into()));
    }
    if rho0.len() != op.len() {
        return Err(Error::Dimension {
            expected: op.len(),
            got: rho0.len(),
            context: "initial density",
        });
    }
    if rho0.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config("initial density must be finite and nonnegative".into()));
    }
    if ((total_mass(op, rho0)) - 1.0).abs() > 1e-9 {
        return Err(Error::Config("initial density must have unit mass".into()));
    }
    let d = op.grid.dim();
    if cfg.region_low.len() != d || cfg.region_high.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: cfg.region_low.len(),
            context: "traced region",
        });
    }
    if !(cfg.dt > 0.0) || !(cfg.t_gap >= cfg.dt) || cfg.n_t < 2 {
        return Err(Error::Config("need dt > 0, t_gap >= dt and n_t >= 2".into()));
    }
    match run(op, rho0, cfg, cfg.dt) {
        Err(Error::Unstable { .. }) => run(op, rho0, cfg, 0.5 * cfg.dt),
        r => r,
    }
}

fn run(op: &FdOperator, rho0: &[f64], cfg: &EvolveConfig, dt: f64) -> Result<EvolveResult> {
    let per_gap = (cfg.t_gap / dt).round() as usize;
    if ((per_gap as f64) * dt - cfg.t_gap).abs() > 1e-9 * cfg.t_gap {
        return Err(Error::Config(format!("t_gap {} is not a multiple of dt {dt}", cfg.t_gap)));
    }
    let inside: Vec<bool> = (0..op.len())
        .map(|p| {
            let c = op.grid.center(p);
            c.iter()
                .zip(cfg.region_low.iter().zip(&cfg.region_high))
                .all(|(v, (l, h))| *v >= *l && *v < *h)
        })
        .collect();
    let vol = op.grid.cell_volume();
    let box_mass = |rho: &[f64]| rho.iter().zip(&inside).filter(|e| *e.1).map(|e| *e.0).sum::<f64>() * vol;
    // implicit Euler with dt/2 uses the same left-hand matrix as the trapezoidal rule
    let lhs = op.factor_shifted(1.0, -0.5 * dt)?;
    let mut rho = rho0.to_vec();
    let mut tmp = vec![0.0; rho.len()];
    let mut times = Vec::with_capacity(cfg.n_t);
    let mut trace = Vec::with_capacity(cfg.n_t);
    let m0 = total_mass(op, &rho);
    let mut mass = m0;
    let mut half_steps_left = cfg.startup_half_steps;
    let mut t = 0.0;
    times.push(0.0);
    trace.push(box_mass(&rho));
    for slice in 1..cfg.n_t {
        let mut step = 0;
        while step < per_gap {
            if half_steps_left > 0 {
                lhs.solve(&mut rho);
                lhs.solve(&mut rho);
                half_steps_left = half_steps_left.saturating_sub(2);
            } else {
                op.matrix.mul_vec(&rho, &mut tmp);
                for (r, a) in rho.iter_mut().zip(&tmp) {
                    *r += 0.5 * dt * a;
                }
                lhs.solve(&mut rho);
            }
            step += 1;
            let m = total_mass(op, &rho);
            if !m.is_finite() {
                return Err(Error::NonFinite("evolved density"));
            }
            if (m - mass).abs() > cfg.max_mass_step {
                return Err(Error::Unstable {
                    mass_error: (m - mass).abs(),
                });
            }
            mass = m;
        }
        t = slice as f64 * cfg.t_gap;
        times.push(t);
        trace.push(box_mass(&rho));
    }
    let window = cfg.window.unwrap_or(SliceWindow::all(cfg.n_t));
    let fit = fit_eigenvalue(&trace, &times, window, &cfg.fit)?;
    Ok(EvolveResult {
        times,
        trace,
        fit,
        dt,
        mass_drift_rate: (mass - m0).abs() / t,
    })
}
