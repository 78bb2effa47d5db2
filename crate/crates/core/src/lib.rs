//! Numerical laboratory for the heavy-tailed random conductance Laplacian.
//!
//! The crate samples i.i.d. conductances on the nearest-neighbour edges of a
//! box `B_n = [-n, n]^d`, assembles the sign-inverted Dirichlet Laplacian on
//! the box (or on the box with its deepest traps removed), computes its bottom
//! eigenpairs and checks how the eigenvectors localize on the minima of the
//! local speed measure `pi_z = sum_{x ~ z} w_xz`.
//!
//! Module map:
//!
//! * [`lattice`]: box geometry, site and edge indexing.
//! * [`environment`]: conductance laws, sampling, speed field, quantiles.
//! * [`operator`]: sparse Dirichlet operator and Dirichlet energy.
//! * [`eigen`]: block preconditioned eigensolver and dense Jacobi oracle.
//! * [`percolation`]: thresholded environment, clusters, holes, sparseness.
//! * [`theory`]: exact and asymptotic localization diagnostics.
//! * [`experiments`]: seeded Monte Carlo harness, limit law, persistence.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eigen;
pub mod environment;
mod error;
pub mod experiments;
pub mod lattice;
pub mod operator;
pub mod percolation;
mod rng;
pub mod theory;

pub use error::{Error, Result};
