use std::path::PathBuf;

/// Errors raised by the simulator and the post-processing checks.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value {value} at cell {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("norm exponent must be >= 1 or infinite, got {0}")]
    InvalidExponent(f64),
    #[error("incompatible dimensions: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid flux parameters: {0}")]
    InvalidFlux(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("initial data width {width} is below two cells ({min})")]
    UnresolvableWidth { width: f64, min: f64 },
    #[error("domain too small: sampled mass misses {defect:e} (relative) of the initial data")]
    DomainTooSmall { defect: f64 },
    #[error("linear solve did not converge: {iterations} iterations, residual {residual:e}")]
    LinearSolve { iterations: usize, residual: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("boundary cells hold {mass:e} at t = {t}, above the leak budget {budget:e}")]
    BoundaryLeak { t: f64, mass: f64, budget: f64 },
    #[error("trajectory stride too coarse: {0}")]
    StrideTooCoarse(String),
    #[error("test function leaves the recorded window: {0}")]
    OutsideWindow(String),
    #[error("insufficient dynamic range: {0}")]
    InsufficientRange(String),
    #[error("misaligned run pair: {0}")]
    Misaligned(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no snapshot at t = {0}")]
    MissingSnapshot(f64),
    #[error("rescaled support missed by the target grid ({0:e} of the mass falls outside)")]
    MissedSupport(f64),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
