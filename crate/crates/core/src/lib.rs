//! Permutation-invariant variational graph autoencoder.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`autodiff`]: dense tensors and a tape-based reverse-mode engine,
//!   generic over the floating-point [`Scalar`] (`f32` for training, `f64` for
//!   gradient checks).
//! * [`graph`]: graph model, random families, relabeling, edit sequences,
//!   padding and the line-oriented dataset format.
//! * [`perm`]: SoftSort relaxation, hard argsort permutations and the
//!   row/column entropy penalty.
//! * [`model`]: message construction, restricted self-attention, encoder with
//!   embedding node, permuter, decoder and node-count head.
//! * [`train`]: loss assembly, Adam, checkpoints and the training loop.
//! * [`eval`]: reconstruction metrics, invariance audits and experiments.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod perm;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
