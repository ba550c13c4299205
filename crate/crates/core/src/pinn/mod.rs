//! Network refinement of eigenfunction estimates with an operator residual.

use crate::prelude::*;

mod loss;
mod mlp;
mod train;

pub use loss::{Executor, LossProblem, LossTerms, Serial, Terms, CHUNK};
pub use mlp::{Derivatives, Mlp};
pub use train::{evaluate_grid, train, train_problem, Adam, HistoryEntry, TrainConfig, TrainError, Trained};

/// Hidden widths used when none are configured.
pub fn default_hidden(dim: usize) -> Vec<usize> {
    if dim >= 4 {
        vec![12; 4]
    } else {
        vec![32; 4]
    }
}
