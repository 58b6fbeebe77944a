//! Experiment configuration, orchestration and output.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ExperimentFile, ExperimentSpec, Method, MethodSelection, SweepParameter, SweepSection};
pub use experiment::{
    monte_carlo, monte_carlo_with, run_trial, sweep, ExperimentResult, MethodSummary, SweepPoint, TrialRecord,
};
pub use output::{verify_outputs, write_experiment, write_sweep, Manifest};
