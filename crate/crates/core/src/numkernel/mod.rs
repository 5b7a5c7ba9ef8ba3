//! Dense numerical kernels: LP and QP solvers, zero-order-hold discretization,
//! Riccati and Lyapunov synthesis.
//!
//! Everything here is a pure function of its inputs. Pivoting rules use fixed
//! tie-breaking so repeated solves of the same data are bit-identical.

mod discretize;
mod lp;
mod qp;
mod riccati;

pub use discretize::zoh_discretize;
pub use lp::{find_feasible_point, solve_lp, LpSolution};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use riccati::{dlqr, dlyap, spectral_radius, LqrResult};

use thiserror::Error;

/// Failure modes shared by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Schur (spectral radius {0})")]
    NotSchur(f64),
    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub type NumResult<T> = Result<T, NumError>;
