//! Small dense primal-dual interior-point solver for convex QCQPs with a linear
//! objective:
//!
//! ```text
//! minimize    cᵀx
//! subject to  Σ_j (r_jᵀx)² + aᵀx ≤ d     (or aᵀx ≤ d)
//!             l ≤ x ≤ u
//! ```
//!
//! Quadratic forms are given through factor rows so they are PSD by construction.

mod certify;
mod problem;
mod solver;
pub mod text;

pub use certify::{certify, residuals, Residuals};
pub use problem::{Affine, Constraint, ConvexQcqp, QuadExpr, SparseVec};
pub use solver::{solve, PrimalSolution, Status, Tolerances};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}
