//! Domain-generalization training core.
//!
//! A small tape-based autodiff engine that supports gradients of gradients,
//! dense feature networks with trainable, fixed-random or fixed-orthogonal
//! classifier heads, a procedural multi-domain image generator, the
//! aggregated-SGD, MLDG and MetaReg trainers, and leave-one-domain-out
//! evaluation.
//!
//! The crate is `no_std` and needs only `alloc`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use tensor::Tensor;
