//! Regularized Bingham flow with perfect slip on rectangles.
//!
//! The crate discretizes the pseudo-stress Bingham model on a staggered grid
//! and provides:
//!
//! * [`grid`]: MAC storage, difference operators with mirror ghosts, norms;
//! * [`energy`]: the smoothed Bingham energy, its exact gradient, the Picard
//!   coefficient and the dual multiplier;
//! * [`stationary`]: Picard / Uzawa solver for the regularized Stokes problem,
//!   regularization studies and an a-posteriori variational-inequality audit;
//! * [`evolution`]: Rothe time stepping with truncated skew-symmetric
//!   convection and the per-step a-priori energy ledger;
//! * [`frame`]: the boundary-flattening normal transformation and its frame
//!   identities.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below fix the usual double-precision instantiation.

// NaN-rejecting `!(x > 0)` checks and index loops that follow the formulas are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod data;
pub mod energy;
pub mod error;
pub mod evolution;
pub mod frame;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod stationary;

pub use error::{BinghamError, EvalError, Result, Stage};
pub use scalar::Real;

pub type Grid64 = grid::Grid<f64>;
pub type VelocityField64 = grid::VelocityField<f64>;
pub type ScalarCellField64 = grid::ScalarCellField<f64>;
pub type TensorCellField64 = grid::TensorCellField<f64>;
pub type PhysicsParams64 = energy::PhysicsParams<f64>;
pub type YieldField64 = energy::YieldField<f64>;
pub type StationaryProblem64 = stationary::StationaryProblem<f64>;
pub type EvolutionProblem64 = evolution::EvolutionProblem<f64>;
pub type PolynomialHeight64 = frame::PolynomialHeight<f64>;
