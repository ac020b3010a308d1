//! Parameterized building blocks. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and records its ops on a [`Graph`] when called.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

use super::graph::{AttentionMask, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{invalid, Result};
use crate::Scalar;

/// Serializable description of a layer, written into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Linear { input: usize, output: usize },
    Conv1d { input: usize, output: usize, kernel: usize, stride: usize },
    RmsNorm { width: usize },
    MultiHeadAttention { width: usize, heads: usize, bidirectional: bool },
    Embedding { vocab: usize, width: usize },
    FeedForward { width: usize, hidden: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let dims: &[usize] = match self {
            LayerSpec::Linear { input, output } => &[*input, *output],
            LayerSpec::Conv1d {
                input,
                output,
                kernel,
                stride,
            } => &[*input, *output, *kernel, *stride],
            LayerSpec::RmsNorm { width } => &[*width],
            LayerSpec::MultiHeadAttention { width, heads, .. } => {
                if *heads == 0 || width % heads != 0 {
                    return Err(invalid!("{heads} heads do not divide width {width}"));
                }
                &[*width]
            }
            LayerSpec::Embedding { vocab, width } => &[*vocab, *width],
            LayerSpec::FeedForward { width, hidden } => &[*width, *hidden],
        };
        if dims.contains(&0) {
            return Err(invalid!("layer {self:?} has a zero dimension"));
        }
        Ok(())
    }
}

/// Gaussian init with standard deviation `std`.
pub fn normal_tensor<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// `weight` is `input × output`, initialized with std `1/sqrt(input)`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_std(store, name, input, output, bias, 1.0 / (input as f64).sqrt(), rng)
    }

    pub fn with_std<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        LayerSpec::Linear { input, output }.validate()?;
        let weight = store.add(format!("{name}.weight"), normal_tensor(input, output, std, rng), true)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![1, output]), true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Linear {
            input: self.input,
            output: self.output,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Temporal convolution over a `T × C` sequence, as im2col plus a product.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub linear: Linear,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        LayerSpec::Conv1d {
            input,
            output,
            kernel,
            stride,
        }
        .validate()?;
        let linear = Linear::new(store, name, kernel * input, output, true, rng)?;
        Ok(Self {
            linear,
            kernel,
            stride,
            pad,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            input: self.linear.input / self.kernel,
            output: self.linear.output,
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let cols = g.im2col(x, self.kernel, self.stride, self.pad)?;
        self.linear.forward(g, cols)
    }
}

#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub weight: ParamId,
    pub width: usize,
}

pub const RMS_EPS: f64 = 1e-6;

impl RmsNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        LayerSpec::RmsNorm { width }.validate()?;
        let weight = store.add(format!("{name}.weight"), Tensor::full(vec![1, width], T::one()), true)?;
        Ok(Self { weight, width })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::RmsNorm { width: self.width }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        g.rms_norm(x, w, T::lit(RMS_EPS))
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub width: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        LayerSpec::Embedding { vocab, width }.validate()?;
        let table = store.add(format!("{name}.table"), normal_tensor(vocab, width, 0.5, rng), true)?;
        Ok(Self { table, vocab, width })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Embedding {
            vocab: self.vocab,
            width: self.width,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var> {
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(invalid!("token {bad} outside vocabulary of {}", self.vocab));
        }
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

/// Row-major `n × n` causal mask: row `i` sees columns `0..=i`.
pub fn causal_mask(n: usize) -> AttentionMask {
    Rc::new((0..n * n).map(|k| k % n <= k / n).collect())
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub width: usize,
    pub heads: usize,
    pub bidirectional: bool,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        LayerSpec::MultiHeadAttention {
            width,
            heads,
            bidirectional,
        }
        .validate()?;
        let std = 1.0 / (width as f64).sqrt();
        let mut w = |suffix: &str, rng: &mut _| store.add(format!("{name}.{suffix}"), normal_tensor(width, width, std, rng), true);
        Ok(Self {
            wq: w("wq", rng)?,
            wk: w("wk", rng)?,
            wv: w("wv", rng)?,
            wo: w("wo", rng)?,
            width,
            heads,
            bidirectional,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::MultiHeadAttention {
            width: self.width,
            heads: self.heads,
            bidirectional: self.bidirectional,
        }
    }

    /// Self-attention over the rows of `x`. An explicit `mask` overrides the
    /// layer's default (full when bidirectional, causal otherwise).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let n = g.value(x).rows();
        let default_mask;
        let mask = match (mask, self.bidirectional) {
            (Some(m), _) => Some(m),
            (None, true) => None,
            (None, false) => {
                default_mask = causal_mask(n);
                Some(&default_mask)
            }
        };
        let (wq, wk, wv, wo) = (g.param(self.wq), g.param(self.wk), g.param(self.wv), g.param(self.wo));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let dh = self.width / self.heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_t(qh, kh)?;
            let s = g.scale(s, scale);
            let p = g.softmax_rows(s, mask)?;
            outs.push(g.matmul(p, vh)?);
        }
        let o = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        g.matmul(o, wo)
    }
}

/// Gated feed-forward: `(silu(x W1) ⊙ x W3) W2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w3: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        LayerSpec::FeedForward { width, hidden }.validate()?;
        Ok(Self {
            w1: Linear::new(store, &format!("{name}.w1"), width, hidden, false, rng)?,
            w3: Linear::new(store, &format!("{name}.w3"), width, hidden, false, rng)?,
            w2: Linear::new(store, &format!("{name}.w2"), hidden, width, false, rng)?,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::FeedForward {
            width: self.w1.input,
            hidden: self.w1.output,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.w1.forward(g, x)?;
        let a = g.silu(a);
        let b = self.w3.forward(g, x)?;
        let h = g.mul(a, b)?;
        self.w2.forward(g, h)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: RmsNorm,
    pub attn: MultiHeadAttention,
    pub norm2: RmsNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: RmsNorm::new(store, &format!("{name}.norm1"), width)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, bidirectional, rng)?,
            norm2: RmsNorm::new(store, &format!("{name}.norm2"), width)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), width, hidden, rng)?,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![self.norm1.spec(), self.attn.spec(), self.norm2.spec(), self.ff.spec()]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let h = self.attn.forward(g, h, mask)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.ff.forward(g, h)?;
        g.add(x, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 3, 3, true, &mut rng).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        store.get_mut(lin.weight).value = eye;
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = lin.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn heads_must_divide_width() {
        let spec = LayerSpec::MultiHeadAttention {
            width: 10,
            heads: 3,
            bidirectional: true,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn causal_attention_ignores_the_future() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = MultiHeadAttention::new(&mut store, "a", 8, 2, false, &mut rng).unwrap();
        let x = normal_tensor::<f64>(6, 8, 1.0, &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[4 * 8..] {
            *v += 3.0;
        }
        let run = |t: Tensor<f64>| {
            let mut g = Graph::new(&store);
            let v = g.input(t);
            let o = attn.forward(&mut g, v, None).unwrap();
            g.value(o).clone()
        };
        let (a, b) = (run(x), run(y));
        assert_eq!(&a.data()[..4 * 8], &b.data()[..4 * 8]);
        assert_ne!(&a.data()[4 * 8..], &b.data()[4 * 8..]);
    }

    #[test]
    fn bidirectional_attention_sees_the_future() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let attn = MultiHeadAttention::new(&mut store, "a", 8, 2, true, &mut rng).unwrap();
        let x = normal_tensor::<f64>(4, 8, 1.0, &mut rng);
        let mut y = x.clone();
        y.data_mut()[3 * 8] += 1.0;
        let run = |t: Tensor<f64>| {
            let mut g = Graph::new(&store);
            let v = g.input(t);
            let o = attn.forward(&mut g, v, None).unwrap();
            g.value(o).row(0).to_vec()
        };
        assert_ne!(run(x), run(y));
    }
}
