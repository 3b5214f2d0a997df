// SPDX-License-Identifier: Apache-2.0

//! Experiment plumbing on top of `asyncrl-core`: TOML configs, parallel
//! sweeps with derived seeds, result tables, bound verification and the
//! figure recipes.

pub mod config;
pub mod error;
pub mod experiment;
pub mod figures;
pub mod gradcheck;
pub mod table;
pub mod verify;

pub use config::{load_config, ExperimentConfig, Mode};
pub use error::{ReportError, Result};
pub use experiment::{run_experiment, run_points};
pub use figures::{reproduce_figure, FigureOutcome};
pub use table::{Format, ResultTable};
pub use verify::{verify_bounds, Verdict};
