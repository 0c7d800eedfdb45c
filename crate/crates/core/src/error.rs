use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Each variant maps to a stable, kebab-case error class (see [`Error::class`])
/// which the command-line front end prints so scripts can branch on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("prefix length {upto} exceeds trajectory length {len}")]
    OutOfRange { upto: usize, len: usize },
    #[error("selection does not fit trajectory {trajectory_id}: {reason}")]
    SelectionMismatch { trajectory_id: String, reason: String },
    #[error("malformed step: {0}")]
    MalformedStep(String),
    #[error("malformed record {id}: {reason}")]
    MalformedRecord { id: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: duplicate id {id}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("unparseable selector response: {0}")]
    UnparseableResponse(String),
    #[error("selector unavailable after {attempts} attempts: {last}")]
    SelectorUnavailable { attempts: usize, last: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("step {0} has no token logprobs")]
    EmptyStep(usize),
    #[error("invalid logprob {0}: must be finite or -inf and <= 0")]
    InvalidLogprob(f64),
    #[error("logprobs for {trajectory_id} do not align: {reason}")]
    Alignment { trajectory_id: String, reason: String },
    #[error("trajectory {0} has no non-critical steps to draw from")]
    NoComplement(String),
    #[error("replay of {trajectory_id} diverged at step {step}: expected {expected:?}, got {actual:?}")]
    Replay { trajectory_id: String, step: usize, expected: String, actual: String },
    #[error("rollout count must be >= 1, got {0}")]
    InvalidN(usize),
    #[error("environment {0} cannot enumerate its states")]
    UnsupportedEnvironment(String),
    #[error("value iteration did not converge within {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("maze generation: {0}")]
    Generation(String),
    #[error("no selection for trajectory {0}")]
    MissingSelection(String),
    #[error("unknown action {0:?}")]
    Vocabulary(String),
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidRatio(_) => "invalid-ratio",
            Error::EmptyTrajectory => "empty-trajectory",
            Error::OutOfRange { .. } => "out-of-range",
            Error::SelectionMismatch { .. } => "selection-mismatch",
            Error::MalformedStep(_) => "malformed-step",
            Error::MalformedRecord { .. } => "malformed-record",
            Error::Parse { .. } => "parse-error",
            Error::DuplicateId { .. } => "duplicate-id",
            Error::UnparseableResponse(_) => "unparseable-response",
            Error::SelectorUnavailable { .. } => "selector-unavailable",
            Error::Transport(_) => "transport-error",
            Error::EmptyStep(_) => "empty-step",
            Error::InvalidLogprob(_) => "invalid-logprob",
            Error::Alignment { .. } => "alignment-error",
            Error::NoComplement(_) => "no-complement",
            Error::Replay { .. } => "replay-error",
            Error::InvalidN(_) => "invalid-n",
            Error::UnsupportedEnvironment(_) => "unsupported-environment",
            Error::NotConverged { .. } => "not-converged",
            Error::Generation(_) => "generation-error",
            Error::MissingSelection(_) => "missing-selection",
            Error::Vocabulary(_) => "vocabulary-error",
            Error::Configuration(_) => "configuration-error",
            Error::Usage(_) => "usage-error",
            Error::Io { .. } => "io-error",
            Error::Json(_) => "json-error",
        }
    }
}
