use thiserror::Error;

use crate::schedules::ScheduleKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the open unit interval")]
    Domain { what: &'static str, value: f64 },

    #[error("signal-to-noise ratio is infinite at u = {u} (sigma = 0)")]
    InfiniteSnr { u: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("operation not supported for schedule {0}")]
    UnsupportedSchedule(ScheduleKind),

    #[error("log-SNR map is not monotone in u near u = {u}")]
    NonMonotone { u: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("forward cache does not belong to this network state")]
    StaleCache,

    #[error("non-finite value at {stage} step {step}")]
    Divergence { stage: &'static str, step: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    /// Numerical failures (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InfiniteSnr { .. }
                | Error::DegenerateDensity(_)
                | Error::NonMonotone { .. }
                | Error::Divergence { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
