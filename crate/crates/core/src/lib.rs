//! Constrained linear model predictive control for a quadrotor.
//!
//! The crate covers the whole pipeline: the nonlinear rigid-body model and
//! its hover linearization ([`model`]), dense linear algebra helpers
//! ([`numerics`]), a convex QP/LP backend ([`qpsolve`]), polyhedral terminal
//! sets ([`invariant_sets`]), the disturbance observer ([`estimator`]), the
//! receding-horizon controller and target selection ([`controller`]) and the
//! closed-loop scenario engine ([`sim`]).
//!
//! Data-parallel loops (terminal-set LPs, certificate sampling, scenario
//! sweeps) go through [`par`], which uses rayon when the `parallel` feature
//! is enabled and falls back to plain iterators otherwise.

pub mod controller;
pub mod error;
pub mod estimator;
pub mod invariant_sets;
pub mod model;
pub mod numerics;
pub mod par;
pub mod qpsolve;
pub mod sim;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use par::Parallelism;
