//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("week {week} out of range 1..={horizon}")]
    WeekOutOfRange { week: u32, horizon: u32 },
    #[error("degenerate schedule: no customers triggered through week {week}")]
    DegenerateSchedule { week: u32 },
    #[error("invalid parameter {name}: {reason}")]
    Domain { name: &'static str, reason: String },
    #[error("transition requested past the horizon (week {week} of {horizon})")]
    PastHorizon { week: u32, horizon: u32 },
    #[error("operation not valid on a terminated experiment state")]
    Terminated,
    #[error("action {action:?} not available at week {week} of {horizon}")]
    IllegalAction {
        action: crate::env::Action,
        week: u32,
        horizon: u32,
    },
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("feature vector length {got} does not match network input {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("q-values diverged during training: |q| = {magnitude:.3e} exceeds guard {guard:.3e}")]
    Divergence { magnitude: f64, guard: f64 },
    #[error("belief grid does not cover +-6 predictive standard deviations at week {week}")]
    GridCoverage { week: u32 },
    #[error("checkpoint parse error at offset {offset}: {message}")]
    PolicyParse { offset: usize, message: String },
    #[error("unknown method id: {0}")]
    UnknownMethod(String),
    #[error("unknown slice field {field}; valid fields: {valid}")]
    UnknownField { field: String, valid: String },
    #[error("no outcomes to aggregate")]
    EmptyOutcomes,
    #[error("invalid configuration: field {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("bisection bracket failed solving {context}")]
    NonBracketing { context: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
