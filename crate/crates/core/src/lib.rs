//! Two-timescale power-system simulation: the complete DAE model, its
//! quasi-steady-state reduction and the frozen-slow transient model, plus
//! tools for diagnosing where the reduction misjudges stability.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dae;
pub mod diagnose;
pub mod fixtures;
pub mod netmodel;
pub mod sim;
pub mod solvers;
