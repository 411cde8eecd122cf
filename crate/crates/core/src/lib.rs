//! Two-stage, resource-constrained architecture search over serial residual
//! supernets.
//!
//! The search first identifies *vital* layers (those present on every
//! input-to-output path of the residual topology), searches their operations
//! on a minimal supernet, then fits a set of resource-targeted *space
//! proposals* and searches the remaining layers inside them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the common choices.
//!
//! Module map:
//! - [`tensor`]: reverse-mode autodiff over n-dimensional tensors, plus SGD/Adam.
//! - [`space`]: supernet description, per-op cost accounting, executable networks.
//! - [`vitality`]: path analysis of the residual topology and the masking probe.
//! - [`proposal`]: architecture samplers and space-proposal fitting.
//! - [`search`]: the two-stage search loop and final architecture derivation.
//! - [`data`]: IDX ingestion, synthetic datasets, stratified splits.
//! - [`train`]: plain training / evaluation of discrete networks.

pub mod data;
pub mod error;
pub mod proposal;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod space;
pub mod tensor;
pub mod train;
pub mod vitality;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Reduced-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Network64 = space::Network<f64>;
pub type Network32 = space::Network<f32>;
pub type SearchOutcome64 = search::SearchOutcome<f64>;
