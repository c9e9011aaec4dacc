//! Finite-volume solvers for Wasserstein gradient flows.
//!
//! The crate discretizes gradient flows of the form `d_t rho = div(rho grad dE/drho)`
//! on two-point flux approximation meshes. Each time step is a convex
//! minimization involving a weighted dual Sobolev norm (the linearized JKO
//! step), solved by an interior-point Newton method. Second-order accuracy in
//! time comes from the EVBDF2 scheme: a discrete geodesic extrapolation of the
//! last two densities followed by a shortened implicit step.
//!
//! Module map:
//!
//! - [`mesh`]: meshes, fields and the discrete calculus.
//! - [`hminus`]: the weighted dual norm and its potential solve.
//! - [`energies`]: entropy, porous-medium and linear energies.
//! - [`solver`]: the interior-point step solver and the naive BDF2 solve.
//! - [`extrapolation`]: the discrete extrapolation operator.
//! - [`schemes`]: LJKO, EVBDF2, VIM and naive BDF2 time stepping.
//! - [`multiphase`]: two-phase porous-media flow with a saturation constraint.
//! - [`oracles`]: exact solutions and one-dimensional quantile references.
//! - [`harness`]: configuration, convergence studies, output files and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod energies;
pub mod extrapolation;
pub mod harness;
pub mod hminus;
pub mod linalg;
pub mod mesh;
pub mod multiphase;
pub mod oracles;
pub mod schemes;
pub mod solver;

pub use energies::Energy;
pub use mesh::{CellField, EdgeField, FluxField, Mesh, MeshError, Space};
pub use schemes::{Scheme, SchemeConfig, Trajectory};

pub use solver::{SolverConfig, SolverError, StepSolution};
