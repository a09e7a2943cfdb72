//! Coupled poromechanics on structured Q1–P0 grids.
//!
//! Displacements live on the nodes (continuous trilinear/bilinear), saturation
//! and pressure are cell-wise constant and exchanged between cells with a
//! two-point flux approximation. Faces interior to each 2×2(×2) macroelement
//! may carry an additional pressure-jump flux that removes the spurious
//! pressure modes of the undrained limit while keeping mass conserved on every
//! macroelement.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, configuration and
//! the command line live in the `porostab` crate.

#![no_std]
// `!(x > 0.0)` also rejects NaN; index loops mirror the stencil formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod assembly;
pub mod benchmarks;
pub mod constitutive;
mod error;
pub mod linear_solver;
pub mod mesh;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
