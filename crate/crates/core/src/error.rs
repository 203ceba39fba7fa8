use crate::math::Vec3;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} is not on the boundary (|xi| = {xi:e})")]
    NotOnBoundary { point: Vec3, xi: f64 },

    #[error("level-set gradient degenerates at {point:?}")]
    DegenerateGradient { point: Vec3 },

    #[error("closest boundary point of {point:?} is ambiguous: {first:?} and {second:?} (distance {distance})")]
    AmbiguousProjection {
        point: Vec3,
        first: Vec3,
        second: Vec3,
        distance: f64,
    },

    #[error("boundary projection of {point:?} did not converge in {iterations} iterations")]
    ProjectionDiverged { point: Vec3, iterations: usize },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec3 },

    #[error("domain is not convex: curvature margin {margin} at {point:?} along {direction:?}")]
    ConvexityViolation {
        margin: f64,
        point: Vec3,
        direction: Vec3,
    },

    #[error("iterative solver stalled after {iterations} iterations (residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("Neumann source is incompatible: mean of rho - rho0 is {mean:e}")]
    IncompatibleSource { mean: f64 },

    #[error("source has negative values (min {min:e})")]
    NonnegativityViolation { min: f64 },

    #[error("negative-time extension requested for t = {t} > 0")]
    PositiveTime { t: f64 },

    #[error("trajectory left the domain at s = {s}")]
    LeftDomain { s: f64 },

    #[error("no boundary crossing within the backward horizon {horizon}")]
    HorizonExceeded { horizon: f64 },

    #[error("negative radicand {value:e} in the level-set weight at x = {x:?}, v = {v:?}")]
    NegativeRadicand { value: f64, x: Vec3, v: Vec3 },

    #[error("boundary sign condition not verified (margin {margin:e})")]
    SignConditionUnverified { margin: f64 },

    #[error("velocity {v:?} is on the wrong side of the wall (n.v = {normal_component:e})")]
    WrongSide { v: Vec3, normal_component: f64 },

    #[error("rejection sampler acceptance {acceptance:e} is below 1e-3")]
    RejectionOverflow { acceptance: f64 },

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("bin {bin} has only {hits} samples")]
    InsufficientStatistics { bin: usize, hits: usize },

    #[error("CFL condition violated: {detail}")]
    CflViolation { detail: String },

    #[error("initial datum violates the wall law (residual {residual:e})")]
    CompatibilityViolation { residual: f64 },

    #[error("scenario parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    ScenarioParse { line: Option<usize>, message: String },

    #[error("scenario out of range: {}", violations.join("; "))]
    ScenarioRange { violations: Vec<String> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
