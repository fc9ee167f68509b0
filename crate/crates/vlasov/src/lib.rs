//! Particle solver and verification harness for relativistic Vlasov
//! dynamics with short-range interactions: self-consistent solutions,
//! scattering diagnostics, the non-relativistic limit, and the CLI plumbing.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod sampling;
pub mod scatter;
pub mod selfconsistent;
pub mod verify;

pub use error::{Error, Result};
