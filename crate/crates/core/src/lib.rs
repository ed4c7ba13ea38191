//! Data-driven tube-based zonotopic predictive control.
//!
//! The crate covers the whole offline/online pipeline for an unknown linear
//! system `x(k+1) = A x(k) + B u(k) + w(k)` with zonotopic noise:
//!
//! - [`setalg`]: zonotopes, matrix zonotopes, interval matrices, H-polytopes
//!   and ellipsoids.
//! - [`ident`]: data matrices from recorded trajectories and the set of
//!   data-consistent models.
//! - [`synth`]: nominal model, disturbance set, gain verification, RPI tube
//!   cross-section and terminal ingredients.
//! - [`qp`] and [`ocp`]: the finite-horizon program and an operator-splitting
//!   QP solver.
//! - [`simloop`]: receding-horizon closed loop against a hidden plant.

pub mod error;
pub mod ident;
pub mod linalg;
pub mod ocp;
pub mod qp;
pub mod setalg;
pub mod simloop;
pub mod synth;

pub use error::{Error, Result};

/// Default absolute tolerance for geometric comparisons.
pub const GEOM_TOL: f64 = 1e-9;
