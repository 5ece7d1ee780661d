//! Long-horizon multivariate time-series forecasting with selective
//! state-space sequence blocks inside a U-shaped multi-scale linear
//! extractor, trained by reverse-mode differentiation on an arena tape.
//!
//! Layering, bottom up:
//! - [`tensor`]: dense row-major f64 tensors and matmul kernels.
//! - [`rng`]: named, independently seeded random streams.
//! - [`autodiff`]: the tape, its operation set, and gradient checking.
//! - [`ssm`]: discretization and the selective scan recurrence.
//! - [`mamba`]: the gated convolution + selective scan sequence block.
//! - [`mtsp`]: residual reconstruction layers and the channel-adaptable path.
//! - [`model`]: the full network, normalization, and naive references.
//! - [`data`]: CSV ingestion, splits, windows, metrics.
//! - [`train`]: Adam, the epoch loop, evaluation.
//! - [`checkpoint`]: the weight file format.
//! - [`bench`]: scaling benchmark and allocation meter.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod mamba;
pub mod model;
pub mod mtsp;
pub mod params;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
