//! Tide-gauge cleaning with a dense variational autoencoder: parsing,
//! normalization, training, anomaly detection, iterative refinement and
//! post-processing, plus synthetic benchmarks and metrics.

pub mod detector;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod refiner;
pub mod scalar;
pub mod series_io;
pub mod synth;
pub mod trainer;
pub mod vae;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Double-precision model, used for checkpoints and gradient checks.
pub type ModelParams64 = vae::ModelParams<f64>;
/// Single-precision model.
pub type ModelParams32 = vae::ModelParams<f32>;
