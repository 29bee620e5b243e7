//! Coupled simulation of multiscale stochastic gene networks.
//!
//! The scaled jump process `Z^N = (X^N, Y^N)` and its piecewise
//! deterministic limit `Z = (X, Y)` are driven by the same realization of
//! independent Poisson random measures, one per reaction. Sharing the
//! measures makes pathwise quantities such as `sup |Z^N - Z|`, the
//! fluctuation process `V^N = √N (X^N - X)` and its decomposition directly
//! computable, and the [`stats`] module turns batches of coupled runs into
//! convergence reports.

// Index loops mirror the numerical formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod fluctuation;
pub mod jump_sim;
pub mod models;
pub mod network;
pub mod path;
pub mod pdmp_sim;
pub mod prm;
pub mod stats;

pub use network::{parse_network, HybridState, ReactionClass, ReactionNetwork};
pub use path::PathRecord;
pub use prm::{Point, PrmStream};
