//! Exact computer-algebra kernel: sparse multivariate polynomials and
//! rational functions over arbitrary-precision rationals, with
//! differentiation, substitution, determinants, and linear solving over the
//! rational-function field.
//!
//! All values are immutable after construction and every operation is a pure
//! function of its inputs, so values can be shared freely between threads.

pub mod fraction;
pub mod gcd;
pub mod linalg;
pub mod poly;
pub mod ratexpr;
pub mod vars;

pub use fraction::CommonDen;
pub use gcd::{coprime, gcd, lcm};
pub use linalg::{determinant, solve_linear, LinearSolution};
pub use poly::{scalar, scalar_int, Mono, Polynomial, Scalar};
pub use ratexpr::RationalExpr;
pub use vars::{same_universe, Var, VarKind, VarUniverse};

/// Errors of the kernel operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SymError {
    #[error("division by zero expression")]
    DivisionByZeroExpr,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("substitution makes a denominator identically zero")]
    SubstitutionSingularity,
    #[error("matrix is not square")]
    NonSquareMatrix,
}
