use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an input value does not hold.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("eigen solver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    /// A bracketing search could not find a sign change or an interior minimum.
    #[error("bracket failure: {0}")]
    Bracket(String),

    /// The slab normalization lies above a measured threshold, so the
    /// speed bracket cannot close.
    #[error(
        "epsilon {epsilon} is not below the measured {which} threshold {threshold:.6e}; \
         a c = 0 solution already has nu(0) below epsilon"
    )]
    EpsilonAboveThreshold {
        epsilon: f64,
        threshold: f64,
        which: &'static str,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("Newton iteration diverged; residual history {history:?}")]
    NewtonDiverged { history: Vec<f64> },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("instability detected at step {step}: {detail}")]
    Instability { step: usize, detail: String },

    #[error("front reached window edge at t = {time}")]
    WindowOverflow { time: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
