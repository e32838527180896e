//! A laboratory for stochastic pilot-wave dynamics on exact plane-wave solutions.
//!
//! * [`wavemodel`] builds Klein-Gordon and Schrödinger superpositions and evaluates ψ jets.
//! * [`fields`] turns a jet into density, phase gradients, quantum potential and drift.
//! * [`residuals`] checks the field equations pointwise.
//! * [`dynamics`] integrates single trajectories.
//! * [`ensemble`] propagates particle ensembles and measures equivariance and relaxation.
//! * [`fpgrid`] solves the Fokker-Planck equation on a grid as an independent oracle.
//! * [`scenario`] reads and validates TOML scenario files.

// Tensor code indexes several arrays by the same component index, and the
// negated comparisons reject NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod ensemble;
pub mod fields;
pub mod fpgrid;
pub mod geometry;
pub mod residuals;
pub mod scenario;
pub mod wavemodel;

pub use num_complex::Complex64;
