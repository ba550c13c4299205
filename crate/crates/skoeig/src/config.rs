//! Experiment configuration: a JSON document, usually with a `.cfg` extension.

use serde::{Deserialize, Serialize};
use skoeig_core::collocation::{BoxGrid, ReferenceBox};
use skoeig_core::model::Model;
use skoeig_core::simulate::SimConfig;
use skoeig_core::spectral::{Averaging, SliceWindow};
use skoeig_core::Kind;
use std::fmt;
use std::path::Path;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Collocation,
    Density,
    Stationary,
    Eigenvalue,
    Eigenfunction,
    Pinn,
    Fd,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Collocation,
        Stage::Density,
        Stage::Stationary,
        Stage::Eigenvalue,
        Stage::Eigenfunction,
        Stage::Pinn,
        Stage::Fd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Collocation => "collocation",
            Stage::Density => "density",
            Stage::Stationary => "stationary",
            Stage::Eigenvalue => "eigenvalue",
            Stage::Eigenfunction => "eigenfunction",
            Stage::Pinn => "pinn",
            Stage::Fd => "fd",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this one reads.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Collocation | Stage::Fd => &[],
            Stage::Density | Stage::Stationary => &[Stage::Collocation],
            Stage::Eigenvalue => &[Stage::Density],
            Stage::Eigenfunction => &[Stage::Density, Stage::Stationary, Stage::Eigenvalue],
            Stage::Pinn => &[Stage::Collocation, Stage::Eigenvalue, Stage::Eigenfunction],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Boxes per dimension.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub dt: f64,
    #[serde(default)]
    pub t_burn: f64,
    pub t_gap: f64,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationSettings {
    pub n_x: usize,
    pub n_y: usize,
    pub alpha: f64,
    /// Held-out reference points used to score the operator residual.
    #[serde(default = "default_holdout")]
    pub n_holdout: usize,
}

fn default_holdout() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Region {
    pub fn reference_box(&self) -> ReferenceBox {
        ReferenceBox::new(self.low.clone(), self.high.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySettings {
    /// Trajectories: in total (forward) or per training box (backward).
    pub k: u64,
    /// Forward runs start uniformly in the box containing this point.
    #[serde(default)]
    pub start_point: Option<Vec<f64>>,
    /// The reference box `B`; required for backward runs, traced for forward ones.
    #[serde(default)]
    pub reference: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySettings {
    pub k: u64,
    pub t_long: f64,
    #[serde(default)]
    pub t_burn: f64,
    pub t_gap: f64,
}

/// Which traces feed the eigenvalue fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// Occupancy of the reference box (forward runs).
    Reference,
    /// Matrix columns with the largest oscillation amplitude in the window.
    Columns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSettings {
    /// Slice indices `[start, end)` for the eigenvalue fit.
    pub eig_window: [usize; 2],
    /// Slice indices `[start, end)` for the eigenfunction least squares.
    pub fn_window: [usize; 2],
    #[serde(default = "one")]
    pub modes: usize,
    #[serde(default)]
    pub traces: Option<TraceSource>,
    /// Column traces fitted when `traces` is `columns`.
    #[serde(default = "default_fit_traces")]
    pub fit_traces: usize,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub row_weighted: bool,
}

fn one() -> usize {
    1
}

fn default_fit_traces() -> usize {
    40
}

impl SpectralSettings {
    pub fn eig_window(&self) -> SliceWindow {
        SliceWindow::new(self.eig_window[0], self.eig_window[1])
    }

    pub fn fn_window(&self) -> SliceWindow {
        SliceWindow::new(self.fn_window[0], self.fn_window[1])
    }

    pub fn trace_source(&self, kind: Kind) -> TraceSource {
        self.traces.unwrap_or(match kind {
            Kind::Forward => TraceSource::Reference,
            Kind::Backward => TraceSource::Columns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnSettings {
    /// Hidden layer widths; empty picks the default for the dimension.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Data-only epochs before the operator residual is switched on.
    #[serde(default = "default_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_batch_x")]
    pub batch_x: usize,
    #[serde(default = "default_batch_y")]
    pub batch_y: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub alternate: bool,
}

fn default_epochs() -> usize {
    30
}
fn default_batch_x() -> usize {
    256
}
fn default_batch_y() -> usize {
    1024
}
fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSettings {
    pub dt: f64,
    pub t_gap: f64,
    pub n_t: usize,
    pub window: [usize; 2],
}

impl Default for EvolveSettings {
    fn default() -> Self {
        Self {
            dt: 0.02,
            t_gap: 0.1,
            n_t: 400,
            window: [50, 400],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSettings {
    /// Cells per side.
    pub n: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Also run the time-evolution route; it is always the fallback when
    /// Arnoldi fails.
    #[serde(default)]
    pub cross_check: bool,
    #[serde(default)]
    pub evolve: EvolveSettings,
}

fn default_count() -> usize {
    4
}

/// Replacement counts applied by `--paper-scale`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperScale {
    #[serde(default)]
    pub density_k: Option<u64>,
    #[serde(default)]
    pub stationary_k: Option<u64>,
    #[serde(default)]
    pub n_x: Option<usize>,
    #[serde(default)]
    pub n_y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSettings {
    /// Nodes per side of the heatmap grid.
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Points with `|U| / max |U|` below this are dropped from the phase grid.
    #[serde(default)]
    pub threshold: f64,
    /// The two coordinates spanned by the heatmap.
    #[serde(default = "default_plane")]
    pub plane: [usize; 2],
    /// Values of the remaining coordinates; empty uses the domain midpoints.
    #[serde(default)]
    pub slice: Vec<f64>,
}

fn default_grid_n() -> usize {
    200
}
fn default_plane() -> [usize; 2] {
    [0, 1]
}

impl Default for PlotSettings {
    fn default() -> Self {
        Self {
            grid_n: default_grid_n(),
            threshold: 0.0,
            plane: default_plane(),
            slice: Vec::new(),
        }
    }
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL[..6].to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: Model,
    pub domain: Domain,
    pub kind: Kind,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub seed: u64,
    pub sim: SimSettings,
    #[serde(default)]
    pub collocation: Option<CollocationSettings>,
    #[serde(default)]
    pub density: Option<DensitySettings>,
    #[serde(default)]
    pub stationary: Option<StationarySettings>,
    #[serde(default)]
    pub spectral: Option<SpectralSettings>,
    #[serde(default)]
    pub pinn: Option<PinnSettings>,
    #[serde(default)]
    pub fd: Option<FdSettings>,
    #[serde(default)]
    pub paper_scale: PaperScale,
    #[serde(default)]
    pub plot: PlotSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.domain.low.len()
    }

    pub fn grid(&self) -> BoxGrid {
        BoxGrid::new(self.domain.low.clone(), self.domain.high.clone(), self.domain.n)
            .expect("validated grid")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            t_burn: self.sim.t_burn,
            t_gap: self.sim.t_gap,
            n_t: self.sim.n_t,
            seed: self.seed,
        }
    }

    /// Settings for the long stationary runs; only `dt`, `t_burn` and `t_gap` matter.
    pub fn stationary_sim_config(&self) -> Option<SimConfig> {
        self.stationary.as_ref().map(|st| SimConfig {
            dt: self.sim.dt,
            t_burn: st.t_burn,
            t_gap: st.t_gap,
            n_t: 2,
            seed: self.seed,
        })
    }

    /// Swaps in the full-scale counts.
    pub fn apply_paper_scale(&mut self) {
        let p = self.paper_scale.clone();
        if let (Some(k), Some(d)) = (p.density_k, self.density.as_mut()) {
            d.k = k;
        }
        if let (Some(k), Some(s)) = (p.stationary_k, self.stationary.as_mut()) {
            s.k = k;
        }
        if let Some(c) = self.collocation.as_mut() {
            if let Some(n) = p.n_x {
                c.n_x = n;
            }
            if let Some(n) = p.n_y {
                c.n_y = n;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: skoeig_core::Error| ConfigError::Invalid(e.to_string());
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid("name must be a non-empty file name");
        }
        self.model.validate().map_err(inv)?;
        let dim = skoeig_core::model::SdeModel::dim(&self.model);
        if self.domain.low.len() != dim || self.domain.high.len() != dim {
            return invalid(format!("domain must have {dim} bounds per side for model {}", self.model.name()));
        }
        BoxGrid::new(self.domain.low.clone(), self.domain.high.clone(), self.domain.n).map_err(inv)?;
        self.sim_config().validate().map_err(inv)?;
        if let Some(sim) = self.stationary_sim_config() {
            sim.validate().map_err(|e| ConfigError::Invalid(format!("stationary: {e}")))?;
        }
        if self.stages.is_empty() {
            return invalid("no stages requested");
        }
        for w in self.stages.windows(2) {
            if w[0] >= w[1] {
                return invalid(format!(
                    "stages must be listed once each in dependency order; `{}` cannot follow `{}`",
                    w[1], w[0]
                ));
            }
        }
        for &st in &self.stages {
            let missing = match st {
                Stage::Collocation => self.collocation.is_none(),
                Stage::Density => self.density.is_none() || self.collocation.is_none(),
                Stage::Stationary => self.stationary.is_none(),
                Stage::Eigenvalue => self.spectral.is_none(),
                Stage::Eigenfunction => self.spectral.is_none(),
                Stage::Pinn => self.pinn.is_none(),
                Stage::Fd => self.fd.is_none(),
            };
            if missing {
                return invalid(format!("stage `{st}` needs its settings section"));
            }
        }
        if let Some(c) = &self.collocation {
            if c.n_x == 0 || c.n_y == 0 {
                return invalid("n_x and n_y must be positive");
            }
            if !(0.0..=1.0).contains(&c.alpha) {
                return invalid("alpha must lie in [0, 1]");
            }
        }
        if let Some(d) = &self.density {
            if d.k == 0 {
                return invalid("density.k must be positive");
            }
            if let Some(r) = &d.reference {
                r.reference_box().validate(&self.grid()).map_err(inv)?;
            }
            match self.kind {
                Kind::Forward => match &d.start_point {
                    Some(p) if p.len() == dim && self.grid().locate(p).is_some() => {}
                    _ => return invalid("forward runs need density.start_point inside the domain"),
                },
                Kind::Backward => {
                    if d.reference.is_none() {
                        return invalid("backward runs need density.reference");
                    }
                }
            }
        }
        if let Some(s) = &self.spectral {
            for (w, what) in [(s.eig_window(), "eig_window"), (s.fn_window(), "fn_window")] {
                w.check(self.sim.n_t)
                    .map_err(|e| ConfigError::Invalid(format!("spectral.{what}: {e}")))?;
            }
            if s.modes == 0 {
                return invalid("spectral.modes must be positive");
            }
            if s.trace_source(self.kind) == TraceSource::Reference
                && self.density.as_ref().is_none_or(|d| d.reference.is_none())
            {
                return invalid("reference traces need density.reference");
            }
        }
        if let Some(f) = &self.fd {
            if dim > 2 {
                return invalid("the finite-difference reference handles 1D and 2D models only");
            }
            if f.count == 0 || f.count > 10 {
                return invalid("fd.count must be in 1..=10");
            }
        }
        if self.plot.plane[0] == self.plot.plane[1] || self.plot.plane.iter().any(|&p| p >= dim) {
            return invalid("plot.plane must name two distinct coordinates");
        }
        if !self.plot.slice.is_empty() && self.plot.slice.len() != dim {
            return invalid(format!("plot.slice needs {dim} values"));
        }
        Ok(())
    }
}
