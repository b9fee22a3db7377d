//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass together with the
//! values it needs for the backward pass. [`Tape::backward`] replays the
//! record in reverse, summing gradient contributions wherever a value fans
//! out. Sparse matrices enter only as constant left operands of
//! [`Tape::spmm`].

mod matrix;
mod optim;
mod sparse;
mod tape;

pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use sparse::SparseCsr;
pub use tape::{BatchNormState, BatchStats, Binary, Gradients, Mode, Tape, Tensor, Unary};
