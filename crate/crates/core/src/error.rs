use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Cholesky factorization failed after jitter escalation (final jitter {final_jitter:e})")]
    FactorizationFailed { final_jitter: f64 },

    #[error("safe set is empty; the algorithm cannot proceed safely")]
    SafeSetEmpty,

    #[error("no candidate points: both maximizer and expander sets are empty")]
    NoCandidates,

    #[error("no point outside the model safe set found among probes")]
    NoOutsideStart,

    #[error("start point is infeasible")]
    InfeasibleStart,

    #[error("unknown benchmark id: {0}")]
    UnknownBenchmark(String),
}
