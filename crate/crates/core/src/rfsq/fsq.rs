use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Scalar;

/// Bounding function applied before scalar rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    #[default]
    Sigmoid,
}

/// How far the end codes' latent representatives sit from the open ends of
/// the bounded range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointClamp {
    /// Clamp `k / (L-1)` to `[eps, 1 - eps]`.
    Fixed(f64),
    /// Clamp to a quarter level inside each end: `eps_i = 1 / (4 (L_i - 1))`.
    QuarterLevel,
}

impl Default for EndpointClamp {
    fn default() -> Self {
        EndpointClamp::Fixed(DEFAULT_EPSILON)
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Finite scalar quantizer: per-dimension level counts over a sigmoid-bounded
/// latent. Codes are integer grid coordinates `0..L_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsqSpec {
    levels: Vec<u32>,
    #[serde(default)]
    bound: Bound,
    #[serde(default)]
    clamp: EndpointClamp,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

impl FsqSpec {
    /// Quantizer with the default `1e-4` endpoint clamp.
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        Self::with_clamp(levels, EndpointClamp::default())
    }

    pub fn with_clamp(levels: Vec<u32>, clamp: EndpointClamp) -> Result<Self> {
        let spec = Self {
            levels,
            bound: Bound::Sigmoid,
            clamp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(invalid!("FSQ needs at least one dimension"));
        }
        if let Some(l) = self.levels.iter().find(|&&l| l < 2) {
            return Err(invalid!("every level count must be at least 2, found {l}"));
        }
        let size = self
            .levels
            .iter()
            .try_fold(1u64, |acc, &l| acc.checked_mul(l as u64))
            .filter(|&s| s <= u32::MAX as u64);
        if size.is_none() {
            return Err(invalid!("codebook size of levels {:?} overflows u32", self.levels));
        }
        if let EndpointClamp::Fixed(eps) = self.clamp {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(invalid!("clamp epsilon must lie in (0, 0.5), got {eps}"));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn bound(&self) -> Bound {
        self.bound
    }

    pub fn clamp(&self) -> EndpointClamp {
        self.clamp
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// `|C| = ∏ L_i`.
    pub fn codebook_size(&self) -> u32 {
        self.levels.iter().product()
    }

    fn epsilon(&self, level: u32) -> f64 {
        match self.clamp {
            EndpointClamp::Fixed(eps) => eps,
            EndpointClamp::QuarterLevel => 0.25 / (level - 1) as f64,
        }
    }

    fn check_width(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(invalid!("expected width {}, got {n}", self.dim()));
        }
        Ok(())
    }

    /// `k_i = round(sigmoid(z_i) · (L_i - 1))`, rounding half away from zero.
    pub fn quantize<T: Scalar>(&self, z: &[T]) -> Result<Vec<u32>> {
        self.check_width(z.len())?;
        z.iter()
            .zip(&self.levels)
            .map(|(&x, &l)| {
                if !x.is_finite() {
                    return Err(invalid!("cannot quantize non-finite value {x}"));
                }
                let top = T::lit((l - 1) as f64);
                let k = (sigmoid(x) * top).round().max(T::zero()).min(top);
                Ok(k.to_u32().expect("code within level range"))
            })
            .collect()
    }

    /// Latent representative `logit(clamp(k_i / (L_i - 1), eps, 1 - eps))`.
    /// Satisfies `quantize(dequantize(k)) == k` for every valid `k`.
    pub fn dequantize<T: Scalar>(&self, codes: &[u32]) -> Result<Vec<T>> {
        self.check_width(codes.len())?;
        codes
            .iter()
            .zip(&self.levels)
            .map(|(&k, &l)| {
                if k >= l {
                    return Err(invalid!("code {k} out of range for {l} levels"));
                }
                let eps = self.epsilon(l);
                let p = (k as f64 / (l - 1) as f64).clamp(eps, 1.0 - eps);
                Ok(T::lit(p.ln() - (1.0 - p).ln()))
            })
            .collect()
    }

    /// Mixed-radix index with dimension 0 least significant.
    pub fn flatten(&self, coords: &[u32]) -> Result<u32> {
        self.check_width(coords.len())?;
        let mut index = 0u32;
        for (&k, &l) in coords.iter().zip(&self.levels).rev() {
            if k >= l {
                return Err(invalid!("coordinate {k} out of range for {l} levels"));
            }
            index = index * l + k;
        }
        Ok(index)
    }

    pub fn unflatten(&self, index: u32) -> Result<Vec<u32>> {
        if index >= self.codebook_size() {
            return Err(invalid!(
                "index {index} out of range for codebook of {}",
                self.codebook_size()
            ));
        }
        let mut rest = index;
        Ok(self
            .levels
            .iter()
            .map(|&l| {
                let k = rest % l;
                rest /= l;
                k
            })
            .collect())
    }
}
