//! Dense tensors and a reverse-mode tape.
//!
//! Every operation on a [`Tape`] records its parents; [`Tape::backward`]
//! walks the record in reverse and accumulates gradients for all nodes that
//! depend on a `requires_grad` leaf. Values are checked for NaN/Inf as they
//! are produced.

mod attention;
mod tape;
mod tensor;

pub use attention::{linear, multi_head_attention, AttentionOutput, AttentionWeights};
pub use tape::{Axis, Tape, Var};
pub use tensor::Tensor;
