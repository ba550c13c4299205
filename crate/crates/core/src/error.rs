use crate::prelude::*;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("collected {collected} of {requested} {what} within a budget of {budget} samples")]
    Shortfall {
        what: &'static str,
        requested: usize,
        collected: usize,
        budget: usize,
    },
    #[error("{diverged} of {total} trajectories diverged (limit 0.1%)")]
    Divergence { diverged: u64, total: u64 },
    #[error("all {0} decay fits failed")]
    AllFitsFailed(usize),
    #[error("degenerate fit window [{t_start}, {t_end}]: {reason}")]
    DegenerateWindow {
        t_start: f64,
        t_end: f64,
        reason: &'static str,
    },
    #[error("rank-deficient least-squares system over window [{t_start}, {t_end}]")]
    RankDeficient { t_start: f64, t_end: f64 },
    #[error("biorthonormal scale {0:e} is numerically zero; likely mismatched modes")]
    NearOrthogonal(f64),
    #[error("non-finite loss at batch {0}")]
    NonFiniteLoss(usize),
    #[error("training diverged at iteration {iteration}: loss {loss:e} exceeds 1e6 x initial {initial:e}")]
    TrainingDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error("singular matrix at pivot {0}")]
    Singular(usize),
    #[error("eigensolver did not converge after {0} restarts")]
    NoConvergence(usize),
    #[error("time stepping unstable: total mass changed by {mass_error:e} in one step")]
    Unstable { mass_error: f64 },
    #[error("grid too coarse: {0} points per dimension (minimum 16)")]
    GridTooCoarse(usize),
}
