use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation block of se(3) matrix is not skew-symmetric (max |X + Xᵀ| = {asymmetry:e})")]
    NotSkewSymmetric { asymmetry: f64 },

    #[error("rotation angle {angle} rad is within {margin:e} of π; logarithm branch is ambiguous")]
    LogBranch { angle: f64, margin: f64 },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("arclength {s} m outside [0, {length}] m")]
    ArclengthOutOfRange { s: f64, length: f64 },

    #[error("coefficient vector has length {got}, basis expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate interval [{start}, {end}]")]
    DegenerateInterval { start: f64, end: f64 },

    #[error("invalid basis configuration: {0}")]
    InvalidBasis(String),

    #[error("least-squares fit is rank deficient in strain component {component}")]
    RankDeficientFit { component: &'static str },

    #[error("linearization diverged in factor {factor}: {source}")]
    DivergedLinearization {
        factor: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{kind} measurement at s = {s} m does not coincide with a node (nearest node {nearest_node} at s = {nearest_s} m)")]
    MeasurementOffGrid {
        kind: &'static str,
        s: f64,
        nearest_node: usize,
        nearest_s: f64,
    },

    #[error("normal equations are rank deficient; under-constrained blocks: {blocks:?}")]
    RankDeficientSystem { blocks: Vec<String> },

    #[error("shooting did not converge after {iterations} Newton iterations (tip residual {residual:e})")]
    ShootingDiverged { iterations: usize, residual: f64 },

    #[error("batch aborted: {failed} of {requested} draws failed to converge")]
    BatchAborted { failed: usize, requested: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dense tables differ: {0}")]
    GridMismatch(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
