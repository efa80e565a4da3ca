//! Experiment harness: plans, sweeps, CSV output, the plan file format and
//! the command-line front end.

pub mod cli;
mod config;
mod output;
mod plan;
mod problem;
mod reproduce;
mod runner;

pub use config::{plan_from_config, plan_from_str};
pub use output::{csv_string, emit_csv, energy_csv_string, snapshot_csv_string, CSV_HEADER};
pub use plan::{
    default_truth, Cell, ExperimentPlan, OutputPaths, PlanKind, ProbeSettings, ReferencePolicy,
    TruthSource, Varied,
};
pub use problem::{parse_expression, CustomProblem, Problem};
pub use runner::{
    reference_key, run, run_with_threads, sort_rows, RowStatus, SweepResult, SweepRow, Trajectory,
    DRIFT_TOL,
};
pub use reproduce::{log_log_slope, reproduce, Check, Reproduction, Target};
