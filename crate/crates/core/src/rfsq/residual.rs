use serde::{Deserialize, Serialize};

use super::fsq::{EndpointClamp, FsqSpec};
use crate::error::{invalid, Result};
use crate::nn::Tensor;
use crate::Scalar;

/// Residual stack of FSQ stages sharing one level layout.
///
/// Stage `v` quantizes the running residual divided by `s_{v,i} = (L_i - 1)^-v`
/// and contributes `s_{v,i} · dequantize(k)`, so each stage works on a finer
/// grid than the one before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfsqSpec {
    base: FsqSpec,
    depth: usize,
}

/// `(V+1) × t` grid of flattened codes, stream-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    depth: usize,
    length: usize,
    codes: Vec<u32>,
}

impl TokenGrid {
    pub fn new(depth: usize, length: usize, codes: Vec<u32>) -> Result<Self> {
        if depth == 0 {
            return Err(invalid!("token grid needs at least one stream"));
        }
        if codes.len() != depth * length {
            return Err(invalid!(
                "{} codes for a {depth}×{length} grid",
                codes.len()
            ));
        }
        Ok(Self {
            depth,
            length,
            codes,
        })
    }

    pub fn filled(depth: usize, length: usize, code: u32) -> Self {
        Self {
            depth,
            length,
            codes: vec![code; depth * length],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn stream(&self, v: usize) -> &[u32] {
        &self.codes[v * self.length..(v + 1) * self.length]
    }

    pub fn get(&self, v: usize, t: usize) -> u32 {
        self.codes[v * self.length + t]
    }

    pub fn set(&mut self, v: usize, t: usize, code: u32) {
        self.codes[v * self.length + t] = code;
    }

    /// Checks every code against a vocabulary bound.
    pub fn check_range(&self, bound: u32) -> Result<()> {
        match self.codes.iter().position(|&c| c >= bound) {
            Some(i) => Err(invalid!(
                "code {} at stream {}, step {} is outside [0, {bound})",
                self.codes[i],
                i / self.length,
                i % self.length
            )),
            None => Ok(()),
        }
    }

    /// Fraction of positions where both grids agree.
    pub fn accuracy(&self, other: &TokenGrid) -> f64 {
        let same = self
            .codes
            .iter()
            .zip(&other.codes)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.codes.len().max(other.codes.len()).max(1) as f64
    }
}

impl RfsqSpec {
    /// Residual stack whose stages use the quarter-level endpoint clamp.
    pub fn new(levels: Vec<u32>, depth: usize) -> Result<Self> {
        Self::from_base(FsqSpec::with_clamp(levels, EndpointClamp::QuarterLevel)?, depth)
    }

    pub fn from_base(base: FsqSpec, depth: usize) -> Result<Self> {
        let spec = Self { base, depth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.depth == 0 {
            return Err(invalid!("residual depth must be at least 1"));
        }
        Ok(())
    }

    pub fn base(&self) -> &FsqSpec {
        &self.base
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn codebook_size(&self) -> u32 {
        self.base.codebook_size()
    }

    /// Per-dimension scale of stage `v`.
    pub fn stage_scale<T: Scalar>(&self, v: usize) -> Vec<T> {
        self.base
            .levels()
            .iter()
            .map(|&l| T::lit(((l - 1) as f64).powi(-(v as i32))))
            .collect()
    }

    fn check_latent<T: Scalar>(&self, z: &Tensor<T>) -> Result<()> {
        if z.cols() != self.dim() {
            return Err(invalid!(
                "latent width {} does not match quantizer width {}",
                z.cols(),
                self.dim()
            ));
        }
        if !z.is_finite() {
            return Err(invalid!("latent contains non-finite values"));
        }
        Ok(())
    }

    /// Quantizes every row of `z` through all stages. Returns the tokens and
    /// the summed representatives.
    pub fn quantize<T: Scalar>(&self, z: &Tensor<T>) -> Result<(TokenGrid, Tensor<T>)> {
        self.check_latent(z)?;
        let (t, d) = (z.rows(), z.cols());
        let mut residual = z.data().to_vec();
        let mut recon = vec![T::zero(); t * d];
        let mut codes = vec![0u32; self.depth * t];
        let mut scaled = vec![T::zero(); d];
        for v in 0..self.depth {
            let scale = self.stage_scale::<T>(v);
            for r in 0..t {
                let row = &mut residual[r * d..(r + 1) * d];
                for i in 0..d {
                    scaled[i] = row[i] / scale[i];
                }
                let coords = self.base.quantize(&scaled)?;
                codes[v * t + r] = self.base.flatten(&coords)?;
                let rep: Vec<T> = self.base.dequantize(&coords)?;
                for i in 0..d {
                    let q = rep[i] * scale[i];
                    row[i] -= q;
                    recon[r * d + i] += q;
                }
            }
        }
        Ok((
            TokenGrid::new(self.depth, t, codes)?,
            Tensor::matrix(t, d, recon)?,
        ))
    }

    /// `R^0 = Z`, `m^v = flatten(FSQ(R^v / s_v))`, `R^{v+1} = R^v - s_v · deq(m^v)`.
    pub fn encode<T: Scalar>(&self, z: &Tensor<T>) -> Result<TokenGrid> {
        Ok(self.quantize(z)?.0)
    }

    /// Sum of the first `stages` stage representatives.
    pub fn decode_stages<T: Scalar>(&self, tokens: &TokenGrid, stages: usize) -> Result<Tensor<T>> {
        if tokens.depth() != self.depth {
            return Err(invalid!(
                "token grid has {} streams, quantizer has depth {}",
                tokens.depth(),
                self.depth
            ));
        }
        if stages > self.depth {
            return Err(invalid!("cannot decode {stages} of {} stages", self.depth));
        }
        tokens.check_range(self.codebook_size())?;
        let (t, d) = (tokens.length(), self.dim());
        let mut out = vec![T::zero(); t * d];
        for v in 0..stages {
            let scale = self.stage_scale::<T>(v);
            for r in 0..t {
                let coords = self.base.unflatten(tokens.get(v, r))?;
                let rep: Vec<T> = self.base.dequantize(&coords)?;
                for i in 0..d {
                    out[r * d + i] += rep[i] * scale[i];
                }
            }
        }
        Tensor::matrix(t, d, out)
    }

    /// `Ẑ = Σ_v s_v · deq(m^v)`.
    pub fn decode<T: Scalar>(&self, tokens: &TokenGrid) -> Result<Tensor<T>> {
        self.decode_stages(tokens, self.depth)
    }
}
