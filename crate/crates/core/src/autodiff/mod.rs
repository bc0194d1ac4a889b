//! Dense float64 tensors and a reverse-mode automatic differentiation tape.

mod gradcheck;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use sparse::Csr;
pub use tape::{logsumexp, sigmoid, BinaryOp, Tape, UnaryOp, Var};
pub use tensor::Tensor;
