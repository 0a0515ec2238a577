//! Optimizers shared by calibration, dataset mixing and curve fitting.

pub mod cmaes;
pub mod lp;
pub mod nls;

pub use cmaes::{cmaes_minimize, Bound, CmaConfig, CmaResult, StopReason};
pub use lp::{lp_solve, LinearProgram, LpSolution};
pub use nls::{nls_fit, NlsFit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch between inputs")]
    DimensionMismatch,
    #[error("objective is not finite at the starting point")]
    ObjectiveNonFinite,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("{points} data points cannot determine {params} parameters")]
    TooFewPoints { points: usize, params: usize },
}
