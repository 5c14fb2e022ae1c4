//! Numerical core for ranking-preserving core-set selection.
//!
//! Everything in this crate is a pure function of its inputs and a seed:
//! synthetic multivariate time series, pairwise-interaction (FC) operators,
//! the adaptive multi-head attention encoder and its contrastive trainer,
//! structural perturbation scoring, core-set selectors, ranking-consistency
//! metrics and the Monte-Carlo validators. The crate only needs `alloc`;
//! file formats, caching and the command line live in the `rankcore` crate.

#![no_std]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Per-head loops index several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod benchmark;
pub mod dataset;
pub mod encoder;
mod error;
pub mod math;
pub mod matrix;
pub mod rng;
pub mod selection;
pub mod spi;
pub mod sps;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
