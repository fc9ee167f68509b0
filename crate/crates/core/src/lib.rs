//! Relativistic kinematics, short-range mean-field forces and characteristic
//! flows for the Vlasov equation.
//!
//! Everything here is `no_std` (with `alloc`) and single-threaded; the `vlasov`
//! crate layers parallel maps, sampling and file formats on top.
#![no_std]
// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ensemble;
pub mod error;
pub mod field;
pub mod flows;
pub mod frozen;
pub mod grid;
pub mod phase_grid;
pub mod potential;
pub mod quadrature;
pub mod ratefit;
pub mod relkin;
pub mod sum;
pub mod vec3;

pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use field::ForceField;
pub use potential::{Coupling, PotentialKind, PotentialSpec};
pub use relkin::{LightSpeed, Theta};
pub use vec3::{Mat3, Momentum3, PhaseState, Position3, Vec3, Velocity3};
