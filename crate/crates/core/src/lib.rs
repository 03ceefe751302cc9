//! Design-space exploration for encoding-based approximate multipliers.
//!
//! A multiplier is replaced by one single-level gate per output bit; the wide
//! output bit vector carries real-valued position weights fitted by least
//! squares against the exact product table. The crate searches such circuits,
//! simulates MAC arrays built from them, and fine-tunes the weights for small
//! quantized networks.
//!
//! Modules, bottom-up:
//!
//! - [`quant`]: operand schemes and the reference product table
//! - [`circuit`]: gate library, random sampling, packed evaluation
//! - [`fit`]: position-weight least squares and RMSE scoring
//! - [`search`]: best-of-N sampling and binary search over output width
//! - [`array_sim`]: cycle-level simulation of encoded and systolic arrays
//! - [`train`]: toy quantized networks, inference and weight fine-tuning
//! - [`cli`]: experiment commands behind the `encmac` binary

pub mod array_sim;
pub mod circuit;
pub mod cli;
pub mod error;
pub mod fit;
pub mod quant;
pub mod search;
pub mod train;

pub use error::{Error, Result};
