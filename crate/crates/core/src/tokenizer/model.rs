use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::{MotionSequence, SkeletonSpec};
use crate::nn::{
    ste_quantize, CheckpointHeader, Conv1d, Graph, LayerSpec, MultiHeadAttention, ParamId, ParamStore, RmsNorm,
    Tensor, Var,
};
use crate::rfsq::{RfsqSpec, TokenGrid};
use crate::Scalar;

use super::TokenizerConfig;

/// Lower bound for per-dimension feature standard deviations.
const STD_FLOOR: f64 = 1e-3;

/// Encoder outputs are squashed to `(-LATENT_BOUND, LATENT_BOUND)`.
pub const LATENT_BOUND: f64 = 3.0;

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), width, width, 3, 1, 1, rng)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), width, width, 3, 1, 1, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = g.silu(x);
        let h = self.conv1.forward(g, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, h)?;
        g.add(x, h)
    }

    fn specs(&self, name: &str, out: &mut Vec<(String, LayerSpec)>) {
        out.push((format!("{name}.conv1"), self.conv1.spec()));
        out.push((format!("{name}.conv2"), self.conv2.spec()));
    }
}

#[derive(Debug, Clone)]
struct AttnBlock {
    norm: RmsNorm,
    attn: MultiHeadAttention,
}

impl AttnBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm: RmsNorm::new(store, &format!("{name}.norm"), width)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, true, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, x)?;
        let h = self.attn.forward(g, h, None)?;
        g.add(x, h)
    }

    fn specs(&self, name: &str, out: &mut Vec<(String, LayerSpec)>) {
        out.push((format!("{name}.norm"), self.norm.spec()));
        out.push((format!("{name}.attn"), self.attn.spec()));
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv1d,
    res: Vec<ResBlock>,
}

/// Convolutional encoder/decoder around a residual FSQ bottleneck.
///
/// Features are standardized with statistics stored as frozen
/// parameters, so a checkpoint is self-contained.
#[derive(Debug, Clone)]
pub struct TokenizerModel<T> {
    config: TokenizerConfig,
    rfsq: RfsqSpec,
    skeleton: Arc<SkeletonSpec>,
    pub store: ParamStore<T>,
    mean: ParamId,
    std: ParamId,
    enc_in: Conv1d,
    enc_stages: Vec<Stage>,
    enc_attn: AttnBlock,
    enc_out: Conv1d,
    dec_in: Conv1d,
    dec_attn: AttnBlock,
    dec_stages: Vec<Stage>,
    dec_out: Conv1d,
}

impl<T: Scalar> TokenizerModel<T> {
    pub fn new(config: TokenizerConfig, skeleton: Arc<SkeletonSpec>, seed: u64) -> Result<Self> {
        config.validate()?;
        let rfsq = config.rfsq()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d_feat = skeleton.feature_width();
        let (w, d) = (config.width, config.levels.len());
        let mean = store.add("tok.norm.mean", Tensor::zeros(vec![1, d_feat]), false)?;
        let std = store.add("tok.norm.std", Tensor::full(vec![1, d_feat], T::one()), false)?;
        let stages = config.downsample.trailing_zeros() as usize;

        let enc_in = Conv1d::new(&mut store, "tok.enc.in", d_feat, w, 3, 1, 1, &mut rng)?;
        let mut enc_stages = Vec::with_capacity(stages);
        for s in 0..stages {
            let conv = Conv1d::new(&mut store, &format!("tok.enc.down{s}"), w, w, 4, 2, 1, &mut rng)?;
            let res = (0..config.res_blocks)
                .map(|r| ResBlock::new(&mut store, &format!("tok.enc.down{s}.res{r}"), w, &mut rng))
                .collect::<Result<_>>()?;
            enc_stages.push(Stage { conv, res });
        }
        let enc_attn = AttnBlock::new(&mut store, "tok.enc.mid", w, config.heads, &mut rng)?;
        let enc_out = Conv1d::new(&mut store, "tok.enc.out", w, d, 3, 1, 1, &mut rng)?;

        let dec_in = Conv1d::new(&mut store, "tok.dec.in", d, w, 3, 1, 1, &mut rng)?;
        let dec_attn = AttnBlock::new(&mut store, "tok.dec.mid", w, config.heads, &mut rng)?;
        let mut dec_stages = Vec::with_capacity(stages);
        for s in 0..stages {
            let conv = Conv1d::new(&mut store, &format!("tok.dec.up{s}"), w, w, 3, 1, 1, &mut rng)?;
            let res = (0..config.res_blocks)
                .map(|r| ResBlock::new(&mut store, &format!("tok.dec.up{s}.res{r}"), w, &mut rng))
                .collect::<Result<_>>()?;
            dec_stages.push(Stage { conv, res });
        }
        let dec_out = Conv1d::new(&mut store, "tok.dec.out", w, d_feat, 3, 1, 1, &mut rng)?;
        Ok(Self {
            config,
            rfsq,
            skeleton,
            store,
            mean,
            std,
            enc_in,
            enc_stages,
            enc_attn,
            enc_out,
            dec_in,
            dec_attn,
            dec_stages,
            dec_out,
        })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn rfsq(&self) -> &RfsqSpec {
        &self.rfsq
    }

    pub fn skeleton(&self) -> &Arc<SkeletonSpec> {
        &self.skeleton
    }

    pub fn feature_width(&self) -> usize {
        self.skeleton.feature_width()
    }

    /// Sets the standardization statistics from a set of `T × D` feature
    /// matrices: per-dimension means, one pooled deviation per feature group
    /// (local joints, root translation, root rotation), scaled so that each
    /// group contributes equally to the mean squared error.
    pub fn fit_normalization(&mut self, features: &[&[T]]) -> Result<()> {
        let d = self.feature_width();
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        for f in features {
            for row in f.chunks_exact(d) {
                for (i, &v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(invalid!("no frames to fit normalization on"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let var: Vec<f64> = sq.iter().zip(&mean).map(|(s, m)| (s / n as f64 - m * m).max(0.0)).collect();
        // One pooled deviation per feature group: per-dimension scaling would
        // blow near-constant coordinates (pure jitter) up to unit variance.
        // Groups are then rescaled to carry equal total weight in the loss.
        let j3 = 3 * self.skeleton.joint_count();
        let groups = [0..j3, j3..j3 + 3, j3 + 3..d];
        let mut std = vec![0.0; d];
        for range in groups.clone() {
            let pooled = (var[range.clone()].iter().sum::<f64>() / range.len() as f64).sqrt().max(STD_FLOOR);
            let balance = (range.len() as f64 * groups.len() as f64 / d as f64).sqrt();
            std[range].fill(pooled * balance);
        }
        self.store.get_mut(self.mean).value = Tensor::matrix(1, d, mean.into_iter().map(T::lit).collect())?;
        self.store.get_mut(self.std).value = Tensor::matrix(1, d, std.into_iter().map(T::lit).collect())?;
        Ok(())
    }

    /// Standardizes a motion's features; errors unless `T` is a multiple of
    /// the downsample factor.
    pub fn normalized_features(&self, m: &MotionSequence<T>) -> Result<Tensor<T>> {
        if m.skeleton().as_ref() != self.skeleton.as_ref() {
            return Err(invalid!("motion skeleton does not match tokenizer skeleton"));
        }
        let frames = m.frames();
        if frames % self.config.downsample != 0 {
            return Err(invalid!(
                "sequence length {frames} is not a multiple of the downsample factor {}; crop or pad it first",
                self.config.downsample
            ));
        }
        let d = self.feature_width();
        let mean = self.store.value(self.mean).data();
        let std = self.store.value(self.std).data();
        let mut f = m.features();
        for row in f.chunks_exact_mut(d) {
            for i in 0..d {
                row[i] = (row[i] - mean[i]) / std[i];
            }
        }
        Tensor::matrix(frames, d, f)
    }

    fn denormalize(&self, y: &Tensor<T>) -> Vec<T> {
        let d = self.feature_width();
        let mean = self.store.value(self.mean).data();
        let std = self.store.value(self.std).data();
        let mut out = y.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for i in 0..d {
                row[i] = row[i] * std[i] + mean[i];
            }
        }
        out
    }

    /// Encoder graph: standardized `T × D` features to a `T/ds × d` latent.
    pub fn encoder_forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.enc_in.forward(g, x)?;
        for stage in &self.enc_stages {
            h = g.silu(h);
            h = stage.conv.forward(g, h)?;
            for r in &stage.res {
                h = r.forward(g, h)?;
            }
        }
        h = self.enc_attn.forward(g, h)?;
        h = g.silu(h);
        let h = self.enc_out.forward(g, h)?;
        // keep latents inside the range the residual stages can represent
        let k = T::lit(LATENT_BOUND);
        let h = g.scale(h, T::one() / k);
        let h = g.tanh(h);
        Ok(g.scale(h, k))
    }

    /// Decoder graph: `t × d` latent to standardized `t·ds × D` features.
    pub fn decoder_forward(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let mut h = self.dec_in.forward(g, z)?;
        h = self.dec_attn.forward(g, h)?;
        for stage in &self.dec_stages {
            h = g.upsample_rows(h, 2)?;
            h = stage.conv.forward(g, h)?;
            for r in &stage.res {
                h = r.forward(g, h)?;
            }
        }
        h = g.silu(h);
        self.dec_out.forward(g, h)
    }

    /// Full reconstruction graph through the straight-through quantizer.
    /// Returns `(latent, reconstruction)`.
    pub fn autoencode(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let z = self.encoder_forward(g, x)?;
        let zq = ste_quantize(g, z, &self.rfsq)?;
        Ok((z, self.decoder_forward(g, zq)?))
    }

    /// Continuous latent `Z = E(X)`.
    pub fn encode(&self, m: &MotionSequence<T>) -> Result<Tensor<T>> {
        let x = self.normalized_features(m)?;
        let mut g = Graph::new(&self.store);
        let xv = g.input(x);
        let z = self.encoder_forward(&mut g, xv)?;
        Ok(g.value(z).clone())
    }

    pub fn tokenize(&self, m: &MotionSequence<T>) -> Result<TokenGrid> {
        self.rfsq.encode(&self.encode(m)?)
    }

    /// Decodes a continuous latent to a motion.
    pub fn decode_latent(&self, z: Tensor<T>, fps: T) -> Result<MotionSequence<T>> {
        if z.cols() != self.rfsq.dim() {
            return Err(invalid!("latent width {} does not match {}", z.cols(), self.rfsq.dim()));
        }
        let mut g = Graph::new(&self.store);
        let zv = g.input(z);
        let y = self.decoder_forward(&mut g, zv)?;
        let f = self.denormalize(g.value(y));
        MotionSequence::from_features(self.skeleton.clone(), fps, &f)
    }

    pub fn detokenize(&self, tokens: &TokenGrid, fps: T) -> Result<MotionSequence<T>> {
        if tokens.depth() != self.rfsq.depth() {
            return Err(invalid!(
                "token grid has {} streams, tokenizer expects {}",
                tokens.depth(),
                self.rfsq.depth()
            ));
        }
        self.decode_latent(self.rfsq.decode(tokens)?, fps)
    }

    /// `detokenize(tokenize(m))`.
    pub fn reconstruct(&self, m: &MotionSequence<T>) -> Result<MotionSequence<T>> {
        self.detokenize(&self.tokenize(m)?, m.fps())
    }

    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let mut out = vec![("tok.enc.in".to_string(), self.enc_in.spec())];
        for (s, st) in self.enc_stages.iter().enumerate() {
            out.push((format!("tok.enc.down{s}"), st.conv.spec()));
            for (r, b) in st.res.iter().enumerate() {
                b.specs(&format!("tok.enc.down{s}.res{r}"), &mut out);
            }
        }
        self.enc_attn.specs("tok.enc.mid", &mut out);
        out.push(("tok.enc.out".into(), self.enc_out.spec()));
        out.push(("tok.dec.in".into(), self.dec_in.spec()));
        self.dec_attn.specs("tok.dec.mid", &mut out);
        for (s, st) in self.dec_stages.iter().enumerate() {
            out.push((format!("tok.dec.up{s}"), st.conv.spec()));
            for (r, b) in st.res.iter().enumerate() {
                b.specs(&format!("tok.dec.up{s}.res{r}"), &mut out);
            }
        }
        out.push(("tok.dec.out".into(), self.dec_out.spec()));
        out
    }

    pub fn checkpoint_header(&self, step: u64) -> CheckpointHeader {
        CheckpointHeader {
            step,
            meta: serde_json::json!({
                "model": "tokenizer",
                "scalar": T::NAME,
                "config": self.config,
                "skeleton": {
                    "joint_names": self.skeleton.joint_names(),
                    "parents": self.skeleton.parents(),
                },
            }),
            layers: self.layer_specs(),
        }
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        crate::nn::save_checkpoint(path, &self.checkpoint_header(step), &self.store)
    }

    /// Rebuilds a model from a checkpoint written by [`TokenizerModel::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let header = crate::nn::read_checkpoint_header(path)?;
        let meta = &header.meta;
        if meta["model"] != "tokenizer" {
            return Err(Error::parse(path, 3, "checkpoint does not hold a tokenizer"));
        }
        let config: TokenizerConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| Error::parse(path, 3, e.to_string()))?;
        #[derive(Deserialize)]
        struct Skel {
            joint_names: Vec<String>,
            parents: Vec<Option<usize>>,
        }
        let skel: Skel =
            serde_json::from_value(meta["skeleton"].clone()).map_err(|e| Error::parse(path, 3, e.to_string()))?;
        let skeleton = Arc::new(SkeletonSpec::new(skel.joint_names, skel.parents)?);
        let mut model = Self::new(config, skeleton, 0)?;
        crate::nn::load_checkpoint(path, &mut model.store)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    /// Mean over sequences of per-sequence MPJPE, millimeters.
    pub mean_mpjpe_mm: f64,
    pub per_sequence_mm: Vec<f64>,
}
