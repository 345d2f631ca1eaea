//! Minimal reverse-mode automatic differentiation for training small
//! coordinate networks on the CPU.
//!
//! Values live in a [`Tape`] for the duration of one step; trainable
//! parameters live in a [`ParamStore`] and are bound to a fresh tape each
//! step. [`AdamState`] updates the store from the accumulated gradients and
//! [`Checkpoint`] persists both.

pub mod adam;
pub mod checkpoint;
mod error;
mod gemm;
pub mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, LrSchedule};
pub use checkpoint::Checkpoint;
pub use error::{AutodiffError, Result};
pub use params::{Bindings, Param, ParamId, ParamStore};
pub use tape::{BinaryKind, Tape, UnaryKind, Var, WEIGHT_NORM_EPS};
pub use tensor::Tensor;

/// Element type of every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Element type of every tensor.
#[cfg(feature = "f32")]
pub type Real = f32;
