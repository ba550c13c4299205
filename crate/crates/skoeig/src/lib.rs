//! Experiment pipeline around `skoeig-core`: configuration and presets,
//! artifact formats, thread-parallel drivers, resumable stage execution,
//! plot-data emission and run validation.

pub mod config;
pub mod formats;
pub mod parallel;
pub mod pipeline;
pub mod plot;
pub mod presets;
pub mod validate;

pub use config::{ExperimentConfig, Stage};
