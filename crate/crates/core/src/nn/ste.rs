use super::graph::{Graph, Var};
use crate::error::Result;
use crate::rfsq::RfsqSpec;
use crate::Scalar;

/// Residual quantization with a straight-through gradient: the forward value
/// is `decode(encode(z))`, the backward pass is the identity.
pub fn ste_quantize<T: Scalar>(g: &mut Graph<'_, T>, z: Var, spec: &RfsqSpec) -> Result<Var> {
    let (_, recon) = spec.quantize(g.value(z))?;
    g.straight_through(z, recon)
}
