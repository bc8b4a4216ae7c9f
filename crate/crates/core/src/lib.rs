//! One-bit weight quantization by alternating closed-form refinement.
//!
//! A weight matrix `W` is approximated as `Ŵ = diag(α_r)·B·diag(α_c)` with
//! `B ∈ {−1, +1}`. The scales and sign rows are refined in turn against a
//! calibration Gram objective, which can target the weights, the
//! quantized-path output, or the full-precision output. An optional
//! attention-preservation filter gates each update.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod amp;
pub mod error;
pub mod factorization;
mod math;
pub mod numerics;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use math::sign;
