use thiserror::Error;

/// Errors produced by the design routines and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Clutter-plus-noise power vanished, which only happens for a zero receive filter.
    #[error("degenerate receiver: clutter-plus-noise power is zero")]
    DegenerateReceiver,

    #[error("ill-conditioned user channel matrix (condition number {0:.3e})")]
    IllConditionedChannel(f64),

    #[error("target SINR {gamma:.6e} is infeasible (largest feasible value {max:.6e})")]
    InfeasibleTargetRate { gamma: f64, max: f64 },

    #[error("sensing target lies in the span of the user channels (C_b = {0:.3e})")]
    TargetInCommSpan(f64),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("bisection failed: {0}")]
    Bisection(String),

    #[error("invalid QCQP: {0}")]
    InvalidProblem(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
