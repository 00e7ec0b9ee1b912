//! Minimizing-movement (JKO) discretization of the two-species
//! Poisson–Nernst–Planck system on bounded boxes with no-flux boundaries.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: uniform Cartesian grids, cell-averaged densities and the
//!   elementary integral functionals (mass, `L^p` norms, entropy, moments).
//! * [`elliptic`]: the Neumann Poisson problem `-Δψ = u - v` and the coupling
//!   (Dirichlet) energy.
//! * [`energy`]: the free energy `E = E_diff + E_ext + E_cpl` and its first
//!   variation.
//! * [`transport`]: quadratic Wasserstein distances, exact in 1-D and
//!   entropic (debiased Sinkhorn) in any dimension.
//! * [`jko`]: the minimizing-movement step, trajectories and Euler–Lagrange
//!   residuals.
//! * [`reference`]: an explicit finite-volume integrator used as an
//!   independent oracle, plus the auxiliary heat / porous-medium flows.
//! * [`testfn`]: smooth compactly supported bumps for weak-form and
//!   Euler–Lagrange residuals.
//! * [`diagnostics`]: post-hoc checks of the discrete a-priori estimates.
//!
//! Data-parallel inner loops (Sinkhorn kernel sweeps, finite-volume fluxes,
//! batches of independent runs) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

pub mod diagnostics;
pub mod elliptic;
pub mod energy;
mod error;
pub mod grid;
pub mod jko;
pub mod par;
pub mod reference;
pub mod testfn;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{Density, Grid, ScalarField, State};
