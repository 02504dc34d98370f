//! Homogenization laboratory for periodic hyperbolic systems `b(D)* g(x) b(D)`:
//! cell problems, Bloch fibers, threshold expansions, operator error studies
//! and Cauchy problems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cauchy;
pub mod checks;
pub mod cli;
pub mod config;
pub mod cell;
pub mod coefficients;
pub mod error;
pub mod fiber;
pub mod germ;
pub mod lattice;
pub mod linalg;
pub mod report;
pub mod scenarios;
pub mod study;

pub use error::{BhlError, Result};
