//! Minimal dense-tensor neural network core.
//!
//! Everything is plain `f64` on row-major [`Tensor`]s: 1-D convolution,
//! dense layers, ReLU, max-over-time pooling, inverted dropout, and a fused
//! softmax/cross-entropy head, each with a hand-derived backward pass. The
//! [`gradcheck`] module verifies all of them against central finite
//! differences, and [`optim`] provides SGD and Adam.
//!
//! Layer arithmetic lives in [`ops`] as pure functions; [`layers`] wraps
//! them in stateful objects implementing [`DiffLayer`] for use by the
//! optimizer and the gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
mod tensor;

pub use gradcheck::{check_layer, check_layer_randomized, rel_err, GradCheckReport};
pub use layers::DiffLayer;
pub use optim::{sgd_step, Adam, AdamConfig};
pub use tensor::Tensor;
