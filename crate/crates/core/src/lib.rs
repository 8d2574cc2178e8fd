//! Dual gradient flows for linear ill-posed problems `A x = y`.
//!
//! The flow `lambda' = y^delta - A grad R*(A* lambda)` is integrated from
//! `lambda(0) = 0` for a strongly convex regularizer `R`; the primal iterate is
//! `x(t) = grad R*(A* lambda(t))`. Stopping rules in [`rules`] pick the time.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod operator;
pub mod problems;
pub mod regularizer;
pub mod rules;

pub use error::{Error, Result};
