//! Inverse design of resistive Jerusalem-cross frequency-selective-surface
//! radar absorbers.
//!
//! The crate is organised as a small pipeline:
//!
//! - [`geometry`]: unit-cell parameterisation and the parametric sweep.
//! - [`em_forward`]: equivalent-circuit sheet model cascaded with ABCD
//!   transmission-line sections, giving the normal-incidence reflection
//!   coefficient of the grounded stack.
//! - [`dataset`]: sweep-driven dataset generation, seeded splits and CSV
//!   persistence.
//! - [`features`]: standardisation, PCA and target scaling.
//! - [`neuralnet`]: dense regression network with batch normalisation,
//!   Leaky ReLU, MSE + L2 loss and Adam, with analytic gradients.
//! - [`pipeline`]: fixed-thickness and variable-thickness inverse models,
//!   prediction and round-trip validation.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod dataset;
pub mod em_forward;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io_util;
pub mod model_file;
pub mod neuralnet;
pub mod pipeline;
pub mod svg;

pub use error::{Error, Result};
pub use geometry::{SweepTable, UnitCellGeometry};
