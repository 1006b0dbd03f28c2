use thiserror::Error;

use crate::tracing::StopReason;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), found {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("field singularity at {point:?}: |eta| = {norm:e}")]
    Singularity { point: [f64; 3], norm: f64 },

    #[error("direction vector has zero length")]
    ZeroDirection,

    #[error("partially umbilic point at {point:?} (gap {gap:e})")]
    Umbilic { point: [f64; 3], gap: f64 },

    #[error("reduced L/M/N form needs |eta_1| > 1e-8, got {eta1:e}")]
    ReducedFormUnavailable { eta1: f64 },

    #[error("trace stopped before returning to the section: {0}")]
    TraceStopped(StopReason),

    #[error("no return to the section within {turns} crossing(s) / arc {arc}")]
    NoReturn { turns: usize, arc: f64 },

    #[error("cycle refinement diverged: {0}")]
    RefinementDiverged(String),

    #[error("frame continuation failed: {0}")]
    FrameContinuation(String),

    #[error("point (v, w) = ({v}, {w}) lies outside the chart radius {radius}")]
    OutsideChart { v: f64, w: f64, radius: f64 },

    #[error("variational system degenerate at s = {s}: det A = {det:e}")]
    DegenerateVariational { s: f64, det: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("plane field is not integrable along the cycle (max |<curl eta, eta>| = {0:e})")]
    NonIntegrable(f64),

    #[error("hyperbolization search exhausted (best margin {best_margin:e} at epsilon {best_epsilon})")]
    SearchExhausted { best_margin: f64, best_epsilon: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::UnknownIdentifier { .. }
                | Error::Arity { .. }
                | Error::InvalidArgument(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
