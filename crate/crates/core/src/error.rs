use thiserror::Error;

/// Errors raised by the geometry, Taylor, model and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("rank-deficient filtration: achieved rank {achieved} of {required}")]
    RankDeficient { achieved: usize, required: usize },

    #[error("flow escaped bound {bound} (|x| = {norm}) after time {time}")]
    FlowEscape { bound: f64, norm: f64, time: f64 },

    #[error("coordinates |h| = {norm} exceed chart radius {radius}")]
    ChartRadius { norm: f64, radius: f64 },

    #[error(
        "point outside chart: Newton stalled at residual {residual} after {iterations} iterations"
    )]
    OutOfChart { residual: f64, iterations: usize },

    #[error("evaluation too close to the pole: d_L = {distance} < {tolerance}")]
    SingularEvaluation { distance: f64, tolerance: f64 },

    #[error("solver did not converge: residual {residual} after {sweeps} sweeps")]
    SolverDivergence {
        residual: f64,
        sweeps: usize,
        history: Vec<f64>,
    },

    #[error("ellipticity violated at node {node:?}: eigenvalue {eigenvalue} outside [{lambda}, {big_lambda}]")]
    Ellipticity {
        node: Vec<i64>,
        eigenvalue: f64,
        lambda: f64,
        big_lambda: f64,
    },

    #[error("quadrature unresolved: step halving changed the value by {relative_change}")]
    Quadrature { relative_change: f64 },

    #[error("bin {bin} holds {count} probe pairs, at least {required} needed")]
    Binning {
        bin: usize,
        count: usize,
        required: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
