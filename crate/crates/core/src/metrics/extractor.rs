use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::motion::{DatasetManifest, MotionSequence};
use crate::nn::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, AdamW, AdamWConfig, CheckpointHeader, Conv1d, Graph,
    LayerSpec, Linear, ParamId, ParamStore, Tensor, Var, WarmupCosine,
};
use crate::Scalar;

const STD_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Output feature width.
    pub width: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Contrastive softmax temperature.
    pub temperature: f64,
    /// Training crop length in frames.
    pub crop: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            hidden: 64,
            epochs: 30,
            batch_size: 32,
            lr: 2e-3,
            temperature: 0.1,
            crop: 64,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.hidden == 0 || self.batch_size == 0 || self.crop == 0 {
            return Err(Error::Config("extractor widths, batch size and crop must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("extractor lr and temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Dual encoder mapping motions and text features into one unit-norm
/// feature space. Motions: standardized frame features, two temporal
/// convolutions, mean over time, projection. Text: two-layer MLP.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    config: ExtractorConfig,
    feature_width: usize,
    text_width: usize,
    pub store: ParamStore<T>,
    mean: ParamId,
    std: ParamId,
    conv1: Conv1d,
    conv2: Conv1d,
    motion_out: Linear,
    text_fc1: Linear,
    text_fc2: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorReport {
    /// Mean contrastive loss per epoch.
    pub losses: Vec<f64>,
    pub version: String,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(config: ExtractorConfig, feature_width: usize, text_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if feature_width == 0 || text_width == 0 {
            return Err(invalid!("extractor input widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let mean = store.add("fx.norm.mean", Tensor::zeros(vec![1, feature_width]), false)?;
        let std = store.add("fx.norm.std", Tensor::full(vec![1, feature_width], T::one()), false)?;
        let conv1 = Conv1d::new(&mut store, "fx.motion.conv1", feature_width, h, 3, 1, 1, &mut rng)?;
        let conv2 = Conv1d::new(&mut store, "fx.motion.conv2", h, h, 3, 1, 1, &mut rng)?;
        let motion_out = Linear::new(&mut store, "fx.motion.out", h, config.width, true, &mut rng)?;
        let text_fc1 = Linear::new(&mut store, "fx.text.fc1", text_width, h, true, &mut rng)?;
        let text_fc2 = Linear::new(&mut store, "fx.text.fc2", h, config.width, true, &mut rng)?;
        Ok(Self {
            config,
            feature_width,
            text_width,
            store,
            mean,
            std,
            conv1,
            conv2,
            motion_out,
            text_fc1,
            text_fc2,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn text_width(&self) -> usize {
        self.text_width
    }

    /// Per-dimension standardization statistics over all frames.
    pub fn fit_normalization(&mut self, motions: &[MotionSequence<T>]) -> Result<()> {
        let d = self.feature_width;
        let (mut sum, mut sq, mut n) = (vec![0.0f64; d], vec![0.0f64; d], 0usize);
        for m in motions {
            self.check_motion(m)?;
            for row in m.features().chunks_exact(d) {
                for (i, v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(invalid!("no frames to fit extractor normalization on"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> =
            sq.iter().zip(&mean).map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR)).collect();
        self.store.get_mut(self.mean).value = Tensor::matrix(1, d, mean.into_iter().map(T::lit).collect())?;
        self.store.get_mut(self.std).value = Tensor::matrix(1, d, std.into_iter().map(T::lit).collect())?;
        Ok(())
    }

    fn check_motion(&self, m: &MotionSequence<T>) -> Result<()> {
        if m.feature_width() != self.feature_width {
            return Err(invalid!(
                "motion feature width {} does not match extractor width {}",
                m.feature_width(),
                self.feature_width
            ));
        }
        if m.frames() == 0 {
            return Err(invalid!("cannot extract features from an empty motion"));
        }
        Ok(())
    }

    fn standardized(&self, m: &MotionSequence<T>) -> Result<Tensor<T>> {
        self.check_motion(m)?;
        let d = self.feature_width;
        let mean = self.store.value(self.mean).data();
        let std = self.store.value(self.std).data();
        let mut f = m.features();
        for row in f.chunks_exact_mut(d) {
            for i in 0..d {
                row[i] = (row[i] - mean[i]) / std[i];
            }
        }
        Tensor::matrix(m.frames(), d, f)
    }

    fn motion_graph(&self, g: &mut Graph<'_, T>, x: Tensor<T>) -> Result<Var> {
        let frames = x.rows();
        let x = g.input(x);
        let h = self.conv1.forward(g, x)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, h)?;
        let h = g.silu(h);
        let pooled = g.avg_pool_rows(h, frames)?;
        self.motion_out.forward(g, pooled)
    }

    fn text_graph(&self, g: &mut Graph<'_, T>, text: Tensor<T>) -> Result<Var> {
        if text.cols() != self.text_width {
            return Err(invalid!("text features of width {} for extractor width {}", text.cols(), self.text_width));
        }
        let x = g.input(text);
        let h = self.text_fc1.forward(g, x)?;
        let h = g.silu(h);
        self.text_fc2.forward(g, h)
    }

    fn unit(&self, g: &mut Graph<'_, T>, v: Var) -> Vec<f64> {
        let n = g.normalize_rows(v, T::lit(1e-12));
        g.value(n).data().iter().map(|x| x.as_f64()).collect()
    }

    /// Unit-norm feature of one motion.
    pub fn encode_motion(&self, m: &MotionSequence<T>) -> Result<Vec<f64>> {
        let x = self.standardized(m)?;
        let mut g = Graph::new(&self.store);
        let z = self.motion_graph(&mut g, x)?;
        Ok(self.unit(&mut g, z))
    }

    /// Unit-norm feature of one `1 × text_width` text row.
    pub fn encode_text(&self, text: &Tensor<T>) -> Result<Vec<f64>> {
        if text.rows() != 1 {
            return Err(invalid!("text features must be a single row, got {}", text.rows()));
        }
        let mut g = Graph::new(&self.store);
        let z = self.text_graph(&mut g, text.clone())?;
        Ok(self.unit(&mut g, z))
    }

    /// `fx-` plus the first 16 hex digits of a SHA-256 over the config and
    /// every parameter value. Metrics are comparable only under one version.
    pub fn version(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        h.update((self.feature_width as u64).to_le_bytes());
        h.update((self.text_width as u64).to_le_bytes());
        for (_, p) in self.store.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        let digest = h.finalize();
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("fx-{hex}")
    }

    fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        vec![
            ("fx.motion.conv1".into(), self.conv1.spec()),
            ("fx.motion.conv2".into(), self.conv2.spec()),
            ("fx.motion.out".into(), self.motion_out.spec()),
            ("fx.text.fc1".into(), self.text_fc1.spec()),
            ("fx.text.fc2".into(), self.text_fc2.spec()),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            step: 0,
            meta: serde_json::json!({
                "model": "feature_extractor",
                "config": self.config,
                "feature_width": self.feature_width,
                "text_width": self.text_width,
                "version": self.version(),
            }),
            layers: self.layer_specs(),
        };
        save_checkpoint(path, &header, &self.store)
    }

    /// Loads a saved extractor and checks its version stamp.
    pub fn load(path: &Path) -> Result<Self> {
        let header = read_checkpoint_header(path)?;
        let meta = &header.meta;
        if meta["model"] != "feature_extractor" {
            return Err(Error::parse(path, 3, "checkpoint does not hold a feature extractor"));
        }
        let config: ExtractorConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| Error::parse(path, 3, e.to_string()))?;
        let width = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::parse(path, 3, format!("missing {k}")))
        };
        let mut fx = Self::new(config, width("feature_width")?, width("text_width")?, 0)?;
        load_checkpoint(path, &mut fx.store)?;
        let stored = meta["version"].as_str().unwrap_or_default();
        // Versions hash f64 values; an f32 reload may round differently.
        if T::NAME == "f64" && stored != fx.version() {
            return Err(Error::parse(path, 3, format!("version stamp {stored} does not match parameters")));
        }
        Ok(fx)
    }
}

fn random_crop<T: Scalar>(m: &MotionSequence<T>, crop: usize, rng: &mut impl Rng) -> Result<MotionSequence<T>> {
    if m.frames() <= crop {
        return Ok(m.clone());
    }
    let start = rng.random_range(0..=m.frames() - crop);
    m.slice(start..start + crop)
}

/// Trains a dual encoder on paired motions and text features with a
/// contrastive loss: each motion is classified against the distinct texts
/// of its batch by scaled cosine similarity.
pub fn train_feature_extractor<T: Scalar>(
    motions: &[MotionSequence<T>],
    texts: &[Tensor<T>],
    config: ExtractorConfig,
    seed: u64,
) -> Result<(FeatureExtractor<T>, ExtractorReport)> {
    if motions.is_empty() || motions.len() != texts.len() {
        return Err(invalid!(
            "extractor training needs equal nonempty motion and text sets, got {} and {}",
            motions.len(),
            texts.len()
        ));
    }
    let text_width = texts[0].cols();
    if texts.iter().any(|t| t.rows() != 1 || t.cols() != text_width) {
        return Err(invalid!("text features must all be 1 x {text_width}"));
    }
    let mut fx = FeatureExtractor::new(config, motions[0].feature_width(), text_width, seed)?;
    fx.fit_normalization(motions)?;
    let cfg = fx.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6678);
    let per_epoch = motions.len().div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let mut losses = Vec::with_capacity(cfg.epochs);
    if total > 0 {
        let sched = WarmupCosine::new(20.min(total / 4), total, cfg.lr, cfg.lr * 0.01)?;
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut order: Vec<usize> = (0..motions.len()).collect();
        let mut k = 0u64;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut unique: Vec<&Tensor<T>> = Vec::new();
                let mut targets = Vec::with_capacity(batch.len());
                for &i in batch {
                    let pos = match unique.iter().position(|u| u.data() == texts[i].data()) {
                        Some(p) => p,
                        None => {
                            unique.push(&texts[i]);
                            unique.len() - 1
                        }
                    };
                    targets.push(pos as u32);
                }
                let crops = batch
                    .iter()
                    .map(|&i| fx.standardized(&random_crop(&motions[i], cfg.crop, &mut rng)?))
                    .collect::<Result<Vec<_>>>()?;
                let text_rows: Vec<T> = unique.iter().flat_map(|t| t.data().iter().copied()).collect();
                let text_in = Tensor::matrix(unique.len(), text_width, text_rows)?;
                let mut g = Graph::new(&fx.store);
                let zs = crops.into_iter().map(|x| fx.motion_graph(&mut g, x)).collect::<Result<Vec<_>>>()?;
                let zm = g.concat_rows(&zs)?;
                let zm = g.normalize_rows(zm, T::lit(1e-12));
                let zt = fx.text_graph(&mut g, text_in)?;
                let zt = g.normalize_rows(zt, T::lit(1e-12));
                let sim = g.matmul_t(zm, zt)?;
                let logits = g.scale(sim, T::lit(1.0 / cfg.temperature));
                let loss = g.cross_entropy(logits, &targets, None, T::from_usize_lossy(batch.len()))?;
                let value = g.value(loss).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("extractor loss became {value} in epoch {epoch}")));
                }
                let mut grads = g.backward(loss)?;
                drop(g);
                grads.clip_global_norm(T::one());
                k += 1;
                opt.step(&mut fx.store, &grads, sched.lr(k))?;
                sum += value * batch.len() as f64;
            }
            let mean = sum / motions.len() as f64;
            log::debug!("extractor epoch {epoch}: loss {mean:.4}");
            losses.push(mean);
        }
    }
    let version = fx.version();
    Ok((fx, ExtractorReport { losses, version }))
}

/// Loads every manifest entry that has a text condition and trains on those
/// pairs.
pub fn train_feature_extractor_from_manifest<T: Scalar>(
    manifest: &DatasetManifest,
    config: ExtractorConfig,
    seed: u64,
) -> Result<(FeatureExtractor<T>, ExtractorReport)> {
    let (mut motions, mut texts) = (Vec::new(), Vec::new());
    for e in &manifest.entries {
        let conds = manifest.load_conditions::<T>(e)?;
        if let Some(t) = conds.text {
            motions.push(manifest.load_motion::<T>(e)?);
            texts.push(t);
        }
    }
    if motions.is_empty() {
        return Err(invalid!("manifest has no entries with text features"));
    }
    train_feature_extractor(&motions, &texts, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synthesize, SyntheticSpec};

    fn corpus(n: usize) -> (Vec<MotionSequence<f64>>, Vec<Tensor<f64>>) {
        let clips = synthesize(&SyntheticSpec {
            sequence_count: n,
            ..SyntheticSpec::default()
        })
        .unwrap();
        clips.into_iter().map(|c| (c.motion, c.text)).unzip()
    }

    fn small() -> ExtractorConfig {
        ExtractorConfig {
            width: 16,
            hidden: 16,
            epochs: 3,
            batch_size: 8,
            ..ExtractorConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let (m, t) = corpus(16);
        let (a, ra) = train_feature_extractor(&m, &t, small(), 3).unwrap();
        let (b, rb) = train_feature_extractor(&m, &t, small(), 3).unwrap();
        assert_eq!(ra, rb);
        assert!(a.store.iter().zip(b.store.iter()).all(|((_, p), (_, q))| p.value == q.value));
        for s in &m {
            let f = a.encode_motion(s).unwrap();
            assert_eq!(f.len(), 16);
            assert!(f.iter().all(|x| x.is_finite()));
            assert!((f.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let (c, _) = train_feature_extractor(&m, &t, small(), 4).unwrap();
        assert_ne!(a.version(), c.version());
    }

    #[test]
    fn checkpoint_round_trip_keeps_version() {
        let (m, t) = corpus(8);
        let (fx, report) = train_feature_extractor(&m, &t, small(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.ckpt");
        fx.save(&path).unwrap();
        let back = FeatureExtractor::<f64>::load(&path).unwrap();
        assert_eq!(back.version(), report.version);
        assert_eq!(back.encode_motion(&m[0]).unwrap(), fx.encode_motion(&m[0]).unwrap());
        assert_eq!(back.encode_text(&t[0]).unwrap(), fx.encode_text(&t[0]).unwrap());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (m, t) = corpus(4);
        assert!(train_feature_extractor(&m, &t[..3], small(), 0).is_err());
        let fx = FeatureExtractor::<f64>::new(small(), 73, 8, 0).unwrap();
        assert!(fx.encode_text(&Tensor::zeros(vec![1, 3])).is_err());
    }
}
