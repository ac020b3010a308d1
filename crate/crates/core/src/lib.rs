//! Motion tokenization with residual finite scalar quantization and masked
//! multi-stream generation under text, audio and trajectory conditions.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common instantiations.

pub mod conditioning;
pub mod curation;
pub mod error;
pub mod maskgen;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod rfsq;
pub mod scalar;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Motion32 = motion::MotionSequence<f32>;
pub type Motion64 = motion::MotionSequence<f64>;
