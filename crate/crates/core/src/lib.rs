//! Poisson-subsampled DP-SGD with fixed-size physical batches.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! - [`sampling`]: Poisson subsampling decomposed into a Binomial batch size
//!   plus a without-replacement draw, padded up to whole physical batches
//!   with a 0/1 mask.
//! - [`binom`]: Binomial log-pmf and tail numerics, and the expected number
//!   of excess gradient computations for masking and for truncated-Binomial
//!   sampling.
//! - [`engine`]: per-example gradients, clipping (explicit and ghost norms for
//!   dense layers), noise addition and the SGD update.
//! - [`costsim`]: deterministic parameter sweeps over the cost analysis.
//!
//! File formats, the CLI and threading live in the `dp-batcher` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod binom;
pub mod costsim;
pub mod engine;
mod error;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use rng::RngStreams;
