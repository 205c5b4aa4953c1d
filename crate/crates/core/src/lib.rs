//! Hydrogen ground-state dynamics driven by a synthesized zero-point field.
//!
//! The crate simulates a classical electron bound to a nucleus, subject to
//! radiation-reaction damping and a stochastic driving field with the
//! zero-point spectrum, and provides the conjectured stationary phase-space
//! density the resulting trajectory statistics are tested against.
//!
//! Modules:
//! - [`field`]: spectral synthesis of the driving fields and their
//!   analytic correlation targets.
//! - [`dynamics`]: Coulomb + damping forces, conserved elements, and the
//!   interchangeable formulations of the equation of motion.
//! - [`integrator`]: RK4 propagation with interpolated field refreshes,
//!   cutoff management, energy floor and ionisation detection.
//! - [`conjecture`]: the conjectured density `f(E, L)`, its marginals, the
//!   initial-condition sampler and goodness-of-fit helpers.
//! - [`reduction`]: chunked tree reduction backing the mode sums.

pub mod conjecture;
pub mod dynamics;
pub mod field;
pub mod integrator;
pub mod reduction;
pub mod vec3;

pub use vec3::Vec3;
