//! Batch GNSS positioning with a window carrier-phase constraint.
//!
//! The engine estimates receiver positions and clocks over a whole session
//! from pseudorange, Doppler and carrier phase. Carrier-phase ambiguities are
//! never estimated: each continuous phase track is split into windows and
//! multiplied by a matrix whose null space contains the constant ambiguity.

// `!(a < b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eliminator;
pub mod error;
pub mod factors;
pub mod geodesy;
pub mod io;
pub mod prng;
pub mod robust;
pub mod simulator;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
