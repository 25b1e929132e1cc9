//! Planelike minimizers of heterogeneous nonlocal Ginzburg-Landau energies.
//!
//! The crate discretizes the energy on periodic strips, builds constrained minimizers and
//! measures their geometry: densities, interface widths, energy growth, barrier
//! inequalities, nonlocal perimeters and the sharp-interface limit.

pub mod model;
pub mod quad;
pub mod lattice;
pub mod energy;
pub mod minimize;
pub mod geometry;
pub mod perimeter;
pub mod barrier;
pub mod cli;
