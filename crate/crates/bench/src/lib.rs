//! Experiment harness for `kcfit`: the benchmark problems, the `(seed, N)`
//! experiment grid with CSV and JSON output, and the pieces behind the
//! `kcfit` command-line tool.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod systems;

pub use error::{HarnessError, Result};
pub use experiment::{
    cell_inputs, run_cell, run_experiment, CellInputs, CellResult, ExperimentConfig,
    ExperimentKind, ExperimentOutput, Method, ResultRow, Summary,
};
pub use systems::{build_aircraft, build_small_random, Problem};
