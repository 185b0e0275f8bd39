use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// [`Error::code`] yields a stable kebab-case tag used by the CLI for
/// machine-parsable error lines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("channel length {len} too short, image delays need at least {required} taps")]
    ChannelTooShort { len: usize, required: usize },

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("degenerate initialization at step {step}: {reason}")]
    DegenerateInitialization { step: usize, reason: String },

    #[error("ensemble failure: {0}")]
    EnsembleFailure(String),

    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("relative improvement undefined: baseline metric is zero")]
    UndefinedRelativeImprovement,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NotFound(_) => "not-found",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::ChannelTooShort { .. } => "channel-too-short",
            Error::InfeasibleGeometry(_) => "infeasible-geometry",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::InfeasibleConstraints(_) => "infeasible-constraints",
            Error::DegenerateInitialization { .. } => "degenerate-initialization",
            Error::EnsembleFailure(_) => "ensemble-failure",
            Error::EstimationFailure(_) => "estimation-failure",
            Error::UndefinedRelativeImprovement => "undefined-relative-improvement",
            Error::Parse { .. } => "parse-error",
            Error::Io(_) => "io-error",
            Error::Json(_) => "io-error",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
