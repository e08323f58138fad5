//! Kernels for multi-scale feature aggregation, dynamic-convolution
//! attention, and panoptic post-processing, plus analytic and counted cost
//! models and a small benchmark harness.
//!
//! All tensors are dense, row-major and generic over `f32`/`f64`. Every
//! reduction sums in ascending index order so results are reproducible
//! bit-for-bit on one platform.

pub mod aggregator;
pub mod attention;
pub mod bench;
pub mod count;
pub mod decoder;
pub mod error;
pub mod fixture;
pub mod flops;
pub mod hungarian;
pub mod kernels;
pub mod panoptic;
pub mod pq;
pub mod registry;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{DType, Element, Tensor};
