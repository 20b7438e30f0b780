//! Solvers for discretized linear inverse problems whose data carry
//! statistical noise.
//!
//! Two families of engines are provided:
//!
//! * [`svd`]: singular-system analysis of the discretized kernel, the
//!   minimum-norm (normal) solution, noise-driven truncation, and a
//!   box-constrained coefficient search that imposes integral constraints.
//! * [`mem`]: maximum entropy solvers (iterated least squares, a barrier
//!   Newton method, an exponential reparametrization, and a self-consistent
//!   loop that refits a parametrized default model).
//!
//! [`spectral`] contains the analytic-continuation benchmark used to
//! exercise both families: the fermionic imaginary-time kernel, synthetic
//! spectral functions, noise injection, and the resolution-limit study.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod mem;
pub mod problem;
pub mod spectral;
pub mod svd;

pub use error::{Error, Result};
pub use problem::{
    chi_squared, inner_product_data, rmse, BoundConstraint, DataSet, DiscretizedProblem,
    IntegralConstraint, KernelSpec, ObjectGrid, SupportInterval,
};
