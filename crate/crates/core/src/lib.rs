//! Localized, differentiable histogram layer built on a small dense-tensor
//! substrate, plus the training stack, synthetic texture generator and
//! experiment harness used to evaluate it.
//!
//! Module map:
//!
//! * [`tensor`]: rank-4 `f64` tensors and the layer primitives (convolution,
//!   pooling, activations, linear head, cross-entropy) with their gradients.
//! * [`hist`]: soft-binning histogram layer (RBF and piecewise-linear), its
//!   backward pass and the equivalent pipeline built from tensor primitives.
//! * [`model`], [`optim`], [`train`], [`gradcheck`]: the three synthetic
//!   architectures, Adam / SGD-momentum, early-stopped training and the
//!   finite-difference gradient checker.
//! * [`synth`]: deterministic structural x statistical texture dataset with
//!   PGM + CSV persistence.
//! * [`metrics`], [`experiment`]: accuracy, confusion matrices, per-class
//!   log Fisher discriminant ratio and multi-seed experiment runs.

pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod hist;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use hist::{Binning, HistogramConfig, HistogramLayer, HistogramParams, InitScheme};
pub use model::{Model, ModelSpec, ModelVariant};
pub use tensor::Tensor;
