//! Reverse-mode differentiation over a recorded tape.
//!
//! Gradients are recorded with the same primitives as the forward pass, so a
//! gradient can itself be differentiated. That is what the second-order
//! meta-learning updates in [`crate::trainers`] rely on.

mod functional;
mod loss;
mod primitive;
mod tape;

pub use functional::{gradient, hessian_vector_product, HvpMode};
pub use loss::{cross_entropy, softmax, softmax_cross_entropy};
pub use primitive::{apply_primitive, Primitive};
pub use tape::{Tape, Var};

pub(crate) use primitive::{argmax, sign};
