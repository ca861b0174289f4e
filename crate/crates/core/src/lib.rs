pub mod audio;
pub mod context;
pub mod datagen;
pub mod embeddings;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod personalization;
pub mod suppressor;
pub mod streaming;
pub mod training;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision network, the inference and training default.
pub type Model = suppressor::SuppressorModel<f32>;
/// Double-precision network, used for gradient checks.
pub type Model64 = suppressor::SuppressorModel<f64>;
pub type Spectrogram = audio::ComplexSpectrogram<f32>;
pub type Spectrogram64 = audio::ComplexSpectrogram<f64>;
pub type Fusion = fusion::FusionWeights<f32>;
pub type Fusion64 = fusion::FusionWeights<f64>;
