use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degree overflow: {0} exceeds ambient dimension {1}")]
    DegreeOverflow(usize, usize),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("frame is not linearly independent (rank deficient)")]
    RankDeficient,
    #[error("vectors do not form a basis of the ambient space")]
    NotABasis,
    #[error("transversality violation: margin {margin:.3e} below threshold {threshold:.1e}")]
    Transversality { margin: f64, threshold: f64 },
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("not a critical point: |grad F| = {0:.3e}")]
    NotCritical(f64),
    #[error("degenerate critical point (not Morse): eigenvalue {eigenvalue:.3e} at {location:?}")]
    NotMorse { eigenvalue: f64, location: Vec<f64> },
    #[error("step size underflow at t = {time:.6} near {location:?}")]
    StepUnderflow { time: f64, location: Vec<f64> },
    #[error("backward flow time {0} exceeds the allowed bound")]
    BackwardHorizon(f64),
    #[error("no convergence within horizon T_max = {horizon} (last point {location:?})")]
    NoConvergence { horizon: f64, location: Vec<f64> },
    #[error("no critical points found")]
    NoCriticalPoints,
    #[error("flowed point is not near target critical point {target}")]
    NotNearTarget { target: usize },
    #[error("jacobian ill-conditioned ({0:.3e}); use staged transport")]
    IllConditioned(f64),
    #[error("disk radius {eps} too large (limit {limit})")]
    RadiusTooLarge { eps: f64, limit: f64 },
    #[error("mesh too coarse after {0} refinement levels")]
    MeshTooCoarse(usize),
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error("regularity violation: {0}")]
    Regularity(String),
    #[error("chain map identity fails in degree {0}")]
    ChainMapIdentity(usize),
    #[error("boundary squared is nonzero in degree {0}")]
    BoundarySquared(usize),
    #[error("integer overflow in exact arithmetic")]
    Overflow,
    #[error("admissibility not reached up to t = {0}")]
    NotAdmissible(f64),
    #[error("no regular value found after {0} attempts")]
    NoRegularValue(usize),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
