use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network is not open: station {station} {reason}")]
    NotOpen { station: usize, reason: &'static str },

    #[error("network is unstable: station {station} has traffic intensity {rho} >= 1")]
    Unstable { station: usize, rho: f64 },

    #[error("routing matrix is singular: I - P^T is not invertible")]
    SingularRouting,

    #[error("target vector selects no station")]
    EmptyTarget,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state {0:?} lies on the boundary; the interior residual is undefined there")]
    BoundaryState(Vec<u32>),

    #[error("start state {0:?} already lies in the target set")]
    AlreadyInTarget(Vec<u32>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("run exceeded the cap of {cap} transitions")]
    RunawayRun { cap: u64 },

    #[error("particle count overflowed u64")]
    CountOverflow,

    #[error("all {m} replications returned zero; coefficient of variation is undefined")]
    DegenerateEstimate { m: usize },

    #[error("state space has more than {limit} states")]
    TooLarge { limit: usize },

    #[error("Gauss-Seidel did not converge after {sweeps} sweeps (relative residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("truncation did not stabilise after {doublings} cap doublings")]
    TruncationNoConverge { doublings: usize },

    #[error("fit requires positive values, got {value} at n = {n}")]
    NonPositiveValue { n: f64, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
