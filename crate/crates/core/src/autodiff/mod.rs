//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{Attr, Attrs, Graph, OpKind, Var};
pub use tensor::{Scalar, Tensor};
