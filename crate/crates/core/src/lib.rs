//! Multilevel least-squares Monte Carlo for discrete BSDEs.

// NaN must fail the positivity checks; the numeric kernels index in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod evaluation;
pub mod forward;
pub mod lsmdp;
pub mod multilevel;
pub mod par;
pub mod problem;
pub mod problems;
pub mod regression;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod solution;
pub mod timegrid;

pub use error::{Error, Result};
