use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("operator is not elliptic: a({xi}) = {value} in component {component}")]
    NonElliptic {
        component: usize,
        xi: f64,
        value: f64,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("tridiagonal system is singular at row {row}")]
    SingularSystem { row: usize },

    #[error("eigendecomposition unavailable (nonsymmetric operator or grid too large)")]
    EigenUnavailable,

    #[error("reaction term produced a non-finite value at node {node}")]
    NonFiniteOutput { node: usize },

    #[error("diffusion matrix is singular at node {node}")]
    SingularDiffusion { node: usize },

    #[error("state blew up at t = {time}: sup norm {norm:.3e} exceeds threshold")]
    BlowUp { time: f64, norm: f64 },

    #[error("feedback connector did not merge by t = {deadline} (distance {distance:.3e})")]
    NoMerge { deadline: f64, distance: f64 },

    #[error("newton iteration did not converge (residual {residual:.3e})")]
    NoConvergence { residual: f64 },

    #[error("line search failed at iteration {iteration}")]
    LineSearchFailure { iteration: usize },

    #[error("every horizon in the schedule diverged")]
    AllDiverged,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
