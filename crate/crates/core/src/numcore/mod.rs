//! Dense numeric foundation: row-major `f64` tensors, a ridge-regularized
//! least-squares solve, and a reproducible random stream.

mod linalg;
mod rng;
mod tensor;

pub use linalg::{ridge_lstsq, solve_dense};
pub use rng::{randn, Rng};
pub use tensor::{matmul, rel_diff_norm, Tensor2};

pub(crate) use tensor::{norm, rel_diff_slices};
