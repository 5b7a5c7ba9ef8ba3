//! Polytopes in half-space form and the set algebra used by tube synthesis.
//!
//! Exact Minkowski sums, linear images and vertex enumeration are supported up
//! to dimension 3; higher dimensions are rejected with
//! [`GeomError::Unsupported`]. Support functions and inclusion tests go
//! through the LP solver and work in any dimension.

mod hull;
mod invariant;
mod ops;
mod polytope;

pub use invariant::{max_admissible_invariant, rpi_outer_approx, rpi_template_approx, RPI_ITERATION_CAP};
pub use ops::{inclusion_margin, is_subset, linear_map, minkowski_sum, minkowski_sum_all, pontryagin_diff, support};
pub use polytope::HPolytope;

use thiserror::Error;

use crate::numkernel::NumError;

/// Largest dimension handled by the vertex-based operations.
pub const MAX_EXACT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("operation on an empty set")]
    EmptySet,
    #[error("set is unbounded")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("closed-loop matrix is not Schur (spectral radius {0})")]
    NotSchur(f64),
    #[error("iteration limit of {iterations} reached")]
    IterationLimit {
        iterations: usize,
        /// Last iterate, not certified invariant.
        partial: Option<Box<HPolytope>>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Numerical(#[from] NumError),
}

pub type GeomResult<T> = Result<T, GeomError>;
