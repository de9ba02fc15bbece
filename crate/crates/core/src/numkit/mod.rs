//! Dense tensors and reverse-mode differentiation.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    abs, add, matmul, mean, node_affine, relu, row_softmax, scale, sub, sum, sum_squares,
    transpose, Tensor,
};
