//! Deep-equilibrium multimodal fusion.
//!
//! The fusion system couples `N` per-modality residual blocks with a gated
//! purify-then-combine fusion block and solves for their joint fixed point.
//! Gradients flow through the fixed point analytically by solving adjoint
//! linear systems with vector-Jacobian products, so no forward iterate has to
//! be kept around for the backward pass.
//!
//! Module map:
//!
//! - [`numcore`]: dense row-major tensors, a ridge least-squares solve, a
//!   reproducible random stream.
//! - [`layers`]: group norm, affine, ReLU primitives with exact VJPs, and the
//!   modality block / fusion step built from them.
//! - [`equilibrium`]: the joint map, its residual, naive and Anderson solvers.
//! - [`implicit_grad`]: adjoint solves, implicit backward, unrolled oracle,
//!   Jacobian regularization, finite-difference gradient checks.
//! - [`training`]: synthetic tasks, classification head, ablation variants,
//!   optimizers, metrics and the training loop.

pub mod equilibrium;
pub mod error;
pub mod implicit_grad;
pub mod layers;
pub mod numcore;
pub mod training;

pub use error::{DeqError, Result};
