//! File formats, threading and the command line for `dp-batcher-core`.

pub mod cli;
pub mod dataset;
mod error;
pub mod executor;
pub mod report;
pub mod sweep_csv;
pub mod training;
pub mod verify;

pub use dp_batcher_core as core;
pub use error::{Error, Result};

/// Master seed used when none is given.
pub const DEFAULT_SEED: u64 = 0xDB5EED;
