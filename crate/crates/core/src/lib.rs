//! A self-contained conditional neural video codec.
//!
//! The codec couples an in-loop latent compressor (space-to-depth transform,
//! conditional analysis/synthesis, range-coded discretized-Gaussian entropy
//! model) with an out-of-loop frame reconstructor (a small U-Net whose
//! residual blocks exchange channel slices between consecutive frames, plus a
//! pixel-shuffle decoder head). Decoding can run synchronously or on a
//! two-worker pipeline that batches reconstruction across the frame
//! dimension; both paths produce bit-identical frames.
//!
//! All math is generic over the scalar type ([`scalar::Scalar`]): the codec
//! operates on `f32` (with optional FP16/BF16 output rounding emulation),
//! while gradient verification reruns the same graphs on `f64`.

pub mod autodiff;
pub mod compressor;
pub mod config;
pub mod consistency;
pub mod dataset;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod frameio;
pub mod gauss;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod precision;
pub mod reconstructor;
pub mod rng;
pub mod scalar;
pub mod shift;
pub mod tensor;
pub mod training;
pub mod weights;

pub use error::{CodecError, Result, TensorError};
pub use precision::PrecisionMode;
pub use scalar::Scalar;

/// Codec-precision tensor: the type every inference path runs on.
pub type Tensor32 = tensor::Tensor<f32>;
/// Verification-precision tensor, used by gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
