//! Simulator for SGD with delayed, compressed, and local updates, all driven
//! through a shared error-feedback recursion.

// Guards are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod compressors;
pub mod engine;
pub mod error;
pub mod numerics;
pub mod objectives;
pub mod oracles;
pub mod schedules;

pub use error::{Error, Result};
