//! Finite scalar quantization and its residual stack.
//!
//! Pure, deterministic functions over immutable specs.

pub mod fsq;
pub mod io;
pub mod residual;

pub use fsq::{logit, sigmoid, Bound, EndpointClamp, FsqSpec};
pub use io::{read_tokens, write_tokens};
pub use residual::{RfsqSpec, TokenGrid};

use crate::error::Result;
use crate::nn::Tensor;
use crate::Scalar;

/// Quantizes one latent vector to grid coordinates.
pub fn fsq_quantize<T: Scalar>(z: &[T], spec: &FsqSpec) -> Result<Vec<u32>> {
    spec.quantize(z)
}

pub fn fsq_dequantize<T: Scalar>(codes: &[u32], spec: &FsqSpec) -> Result<Vec<T>> {
    spec.dequantize(codes)
}

pub fn flatten_code(coords: &[u32], spec: &FsqSpec) -> Result<u32> {
    spec.flatten(coords)
}

pub fn unflatten_code(index: u32, spec: &FsqSpec) -> Result<Vec<u32>> {
    spec.unflatten(index)
}

pub fn rfsq_encode<T: Scalar>(z: &Tensor<T>, spec: &RfsqSpec) -> Result<TokenGrid> {
    spec.encode(z)
}

pub fn rfsq_decode<T: Scalar>(tokens: &TokenGrid, spec: &RfsqSpec) -> Result<Tensor<T>> {
    spec.decode(tokens)
}
