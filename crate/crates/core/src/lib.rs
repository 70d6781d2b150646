//! Recursive-utility portfolio and consumption choice solved by
//! Pontryagin-guided direct policy optimization.
//!
//! The crate builds without `std` (it needs `alloc`); enable the `serde`
//! feature for serializable parameter types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytic;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod market;
pub mod math;
pub mod nn;
pub mod pgdpo;
pub mod preferences;
pub mod projection;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
