//! Minimal dense-tensor kernel with reverse-mode automatic differentiation.
//!
//! Forward computations are recorded on a [`Tape`]; [`Tape::backward`]
//! returns gradients for every recorded value. Matrix products and
//! convolutions are lowered to `matrixmultiply` GEMM calls, everything else is
//! plain loops over row-major buffers. Execution is single-threaded and
//! bit-deterministic for a given precision.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod scalar;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use optim::{Adam, AdamConfig, BoundParams, ParamStore, PlateauScheduler};
pub use scalar::{Float, Precision};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
