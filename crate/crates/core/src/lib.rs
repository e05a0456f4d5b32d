//! Asymptotic-preserving IMEX Runge-Kutta discretizations for optimal
//! boundary control of the Goldstein-Taylor model.
//!
//! The Goldstein-Taylor model is the 2x2 hyperbolic relaxation system
//!
//! ```text
//! rho_t + j_x           = 0
//! j_t + rho_x / eps^2   = -j / eps^2
//! ```
//!
//! on `x in [0,1]`, controlled through the right boundary and driven towards a
//! desired terminal density `rho_d` by minimizing
//!
//! ```text
//! J(rho, u) = 1/2 ||rho(., T) - rho_d||^2  +  nu/2 ||u||^2 ,
//! ```
//!
//! subject to box constraints on the control. As `eps -> 0` the state system
//! relaxes to the heat equation `rho_t = rho_xx` with a Robin boundary
//! condition carrying the control. The time integrators implemented here are
//! implicit-explicit (IMEX) Runge-Kutta pairs combined with a per-stage
//! relaxation weighting chosen so that the explicitly treated flux vanishes to
//! `O(eps^2)`; the same discretization therefore remains stable and second
//! order accurate uniformly in `eps`, including `eps = 0`, with a hyperbolic
//! (not parabolic) time step restriction.
//!
//! Module map:
//!
//! * [`tableau`] - Butcher tableau pairs, the built-in scheme registry and
//!   structural classification (type A, stiff accuracy, order conditions).
//! * [`relaxation`] - the per-stage relaxation weights and the numerical
//!   verification of the flux cancellation.
//! * [`grid`] - cell-centered grid, difference stencils, ghost-cell closures
//!   and the eps-dependent stencil blending.
//! * [`forward`] - the IMEX time stepper for the state, for `eps > 0` and for
//!   the diffusion limit.
//! * [`adjoint`] - backward multiplier sweeps: the exact discrete transpose
//!   used for gradients, and the explicit stage-form systems used as
//!   cross-checks.
//! * [`control`] - objective, reduced gradient, box projection and the
//!   projected-gradient optimizer.
//! * [`config`] / [`experiments`] / [`report`] - JSON run configuration, the
//!   experiment drivers (order study, benchmark, cancellation check) and CSV
//!   emission. The `gtc` binary wraps these.

pub mod adjoint;
pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod rational;
pub mod relaxation;
pub mod report;
pub mod tableau;
mod tridiag;

pub use error::{Error, Result};
pub use forward::{ControlSource, ForwardTrajectory, ProblemConfig, ProblemData};
pub use grid::{Field, Grid1D};
pub use tableau::{builtin_scheme, classify, IMEXPair, SchemeClassification};
