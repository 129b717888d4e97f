//! Experiment harness for `obo-core`: JSON configs, parallel runs, JSONL
//! traces, summary CSV, SVG charts, scaling studies and probe suites.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod study;

pub use config::{ExperimentConfig, ProblemSpec, SolverSpec};
pub use error::{HarnessError, Result};
pub use runner::{resummarize, run_experiment, run_single, RunOutcome, RunSummary, CSV_HEADER};
pub use study::{compare_solvers, run_probes, scaling_study, ScalingReport};
