//! Kernelized VLAD aggregation over Euclidean, SPD and Grassmann descriptors.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! timing live in the `kvlad` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codebook;
pub mod data;
pub mod encode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
