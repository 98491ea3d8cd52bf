//! Periodic E-inclusions from obstacle problems, and the effective-tensor
//! formulas they make explicit.
//!
//! The pipeline runs bottom-up through the modules:
//! [`lattice`] grids, [`obstacle`] construction, the [`vi`] solver,
//! coincident-set analysis in [`einclusion`], Fourier-space oracles in
//! [`spectral`], and composite formulas in [`homogenize`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod einclusion;
pub mod homogenize;
pub mod lattice;
pub(crate) mod linalg;
pub mod obstacle;
pub mod spectral;
pub mod tensor;
pub mod vi;

pub use lattice::{BravaisLattice, GridError, Mask, MatrixField, PeriodicGrid, ScalarField};
pub use obstacle::{Curvature, Obstacle, ObstacleError, Piece, QuadraticPiece, Translations};
pub use tensor::Tensor4;
pub use vi::{SolveError, SolveOptions, Sweep, VISolution};
