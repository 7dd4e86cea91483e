use thiserror::Error;

/// Errors raised by the geometry, path, solver and harness layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point lies outside the closed domain (boundary distance {distance:e})")]
    OutOfDomain { distance: f64 },
    #[error("no feasible constraint resolution: {reason}")]
    InfeasibleStep { reason: String },
    #[error("displacement of norm {norm} exceeds the domain reach {reach}")]
    StepExceedsReach { norm: f64, reach: f64 },
    #[error("closest-point search did not converge after {iterations} iterations")]
    ProjectionDiverged { iterations: usize },
    #[error("boundary sampling produced no points")]
    NoBoundarySamples,
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("level {level} is finer than the path's fine level {fine_level}")]
    LevelTooFine { level: u32, fine_level: u32 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),
    #[error("paths report different output times")]
    MismatchedTimes,
    #[error("Lyapunov exponent r = {r} must lie strictly below {threshold}")]
    InvalidLyapunovRate { r: f64, threshold: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("time {t} is not on the dyadic grid of level {level}")]
    OffGrid { t: f64, level: u32 },
    #[error("{failed} of {total} paths failed; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
