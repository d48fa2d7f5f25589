//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! Every operation is a method on [`Tape`] that records its inputs and
//! returns a [`Var`] handle. [`Tape::backward`] walks the tape in reverse
//! insertion order and accumulates gradients by the chain rule.
//!
//! The op set is deliberately small: matrix products, elementwise
//! arithmetic, the activations used by the network, row concatenation and
//! pooling, and the two reductions the losses need. Only a `1 × d` bias row
//! is broadcast implicitly ([`Tape::add_row`]); every other shape mismatch is
//! an error.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
