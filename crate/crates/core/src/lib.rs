//! Finite element solver for a nonlinear quasi-static poroelasticity model,
//! posed in the three-field form (displacement `u`, pseudo-pressure `xi`,
//! fluid content `eta`) that decouples the elastic and diffusive physics.
//!
//! The discretization uses Taylor-Hood P2 displacements with P1 scalar fields
//! on uniform triangulations of a rectangle, backward Euler in time, and a
//! Newton iteration for the nonlinear stress. The `scenario` module ships two
//! manufactured solutions with the parameter sets used for convergence and
//! locking studies, and `verify` computes error norms, convergence rates,
//! conservation residuals and discrete energy diagnostics.

pub mod assembly;
pub mod element;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod rng;
pub mod scenario;
pub mod spaces;
pub mod stepper;
pub mod verify;
pub mod vtk;

pub use error::{Error, Result};
