//! Dense array arithmetic with reverse-mode gradient accumulation.
//!
//! [`Tensor`] is a row-major matrix of f64. [`Tape`] records forward
//! operations and can backpropagate a scalar loss to every tracked leaf.
//! A tape is confined to one thread for the duration of a forward/backward
//! pass; plain tensors are freely shareable once frozen.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
