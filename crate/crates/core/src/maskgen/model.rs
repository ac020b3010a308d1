use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GenConfig;
use crate::conditioning::{ConditionSet, TrajectoryEncoder};
use crate::error::{invalid, Error, Result};
use crate::nn::{
    AttentionMask, CheckpointHeader, Embedding, Graph, LayerSpec, Linear, ParamId, ParamStore, RmsNorm,
    TransformerBlock, Var,
};
use crate::rfsq::TokenGrid;
use crate::Scalar;

/// How the token grid is laid out along the backbone sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One row per timestep carrying the sum of all stream embeddings.
    Parallel,
    /// One row per token, stream-major (`p = v·t + τ`).
    Flatten,
    /// Flattened and shifted right by one, with causal attention.
    Autoregressive,
}

#[derive(Debug, Clone)]
struct Head {
    fc1: Linear,
    fc2: Linear,
}

/// Multi-stream masked token generator with prefix conditioning.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    config: GenConfig,
    pub store: ParamStore<T>,
    text_proj: Linear,
    text_type: ParamId,
    audio_proj: Linear,
    audio_type: ParamId,
    traj: TrajectoryEncoder,
    traj_type: ParamId,
    embeds: Vec<Embedding>,
    pos: ParamId,
    stream_id: ParamId,
    blocks: Vec<TransformerBlock>,
    norm: RmsNorm,
    heads: Vec<Head>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = config.width;
        let type_row = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| {
            store.add(name, crate::nn::layers::normal_tensor(1, w, 0.5, rng), true)
        };
        let text_proj = Linear::new(&mut store, "gen.text.proj", config.text_width, w, true, &mut rng)?;
        let text_type = type_row(&mut store, "gen.text.type", &mut rng)?;
        let audio_proj = Linear::new(&mut store, "gen.audio.proj", config.audio_width, w, true, &mut rng)?;
        let audio_type = type_row(&mut store, "gen.audio.type", &mut rng)?;
        let traj = TrajectoryEncoder::new(&mut store, "gen.traj.enc", config.downsample, w, &mut rng)?;
        let traj_type = type_row(&mut store, "gen.traj.type", &mut rng)?;
        let embeds = (0..config.streams)
            .map(|v| Embedding::new(&mut store, &format!("gen.embed.stream{v}"), config.vocab(), w, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let pos = store.add(
            "gen.embed.pos",
            crate::nn::layers::normal_tensor(config.max_len, w, 0.5, &mut rng),
            true,
        )?;
        let stream_id = store.add(
            "gen.embed.stream_id",
            crate::nn::layers::normal_tensor(config.streams, w, 0.5, &mut rng),
            true,
        )?;
        let blocks = (0..config.layers)
            .map(|l| {
                TransformerBlock::new(
                    &mut store,
                    &format!("gen.backbone.{l}"),
                    w,
                    config.heads,
                    config.ff_hidden,
                    true,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = RmsNorm::new(&mut store, "gen.backbone.norm", w)?;
        let heads = (0..config.streams)
            .map(|v| {
                Ok(Head {
                    fc1: Linear::new(&mut store, &format!("gen.head.{v}.fc1"), w, w, true, &mut rng)?,
                    fc2: Linear::new(&mut store, &format!("gen.head.{v}.fc2"), w, config.codebook as usize, true, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            store,
            text_proj,
            text_type,
            audio_proj,
            audio_type,
            traj,
            traj_type,
            embeds,
            pos,
            stream_id,
            blocks,
            norm,
            heads,
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    fn check_grid(&self, tokens: &TokenGrid) -> Result<()> {
        if tokens.depth() != self.config.streams {
            return Err(invalid!(
                "token grid has {} streams, generator expects {}",
                tokens.depth(),
                self.config.streams
            ));
        }
        if tokens.length() == 0 || tokens.length() > self.config.max_len {
            return Err(invalid!(
                "sequence of {} tokens outside 1..={}",
                tokens.length(),
                self.config.max_len
            ));
        }
        tokens.check_range(self.config.vocab() as u32)
    }

    fn positions(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.max_len) {
            return Err(invalid!("position {bad} exceeds the maximum length {}", self.config.max_len));
        }
        let p = g.param(self.pos);
        g.gather_rows(p, ids)
    }

    fn typed(&self, g: &mut Graph<'_, T>, x: Var, ty: ParamId, with_pos: bool) -> Result<Var> {
        let x = if with_pos {
            let n = g.value(x).rows();
            let p = self.positions(g, &(0..n).collect::<Vec<_>>())?;
            g.add(x, p)?
        } else {
            x
        };
        let ty = g.param(ty);
        g.add_row(x, ty)
    }

    /// Condition prefix rows (text, audio, trajectory, in that order), or
    /// `None` when every modality is absent.
    pub fn prefix(&self, g: &mut Graph<'_, T>, conds: &ConditionSet<T>) -> Result<Option<Var>> {
        let mut parts = Vec::new();
        if let Some(text) = &conds.text {
            if text.cols() != self.config.text_width {
                return Err(invalid!("text features have width {}, expected {}", text.cols(), self.config.text_width));
            }
            let x = g.input(text.clone());
            let x = self.text_proj.forward(g, x)?;
            parts.push(self.typed(g, x, self.text_type, false)?);
        }
        if let Some(audio) = &conds.audio {
            if audio.cols() != self.config.audio_width {
                return Err(invalid!("audio features have width {}, expected {}", audio.cols(), self.config.audio_width));
            }
            if audio.rows() < self.config.downsample {
                return Err(invalid!("audio of {} frames is shorter than one token", audio.rows()));
            }
            let x = g.input(audio.clone());
            let x = g.avg_pool_rows(x, self.config.downsample)?;
            let x = self.audio_proj.forward(g, x)?;
            parts.push(self.typed(g, x, self.audio_type, true)?);
        }
        if let Some(traj) = &conds.trajectory {
            let x = g.input(traj.clone());
            let x = self.traj.forward(g, x)?;
            parts.push(self.typed(g, x, self.traj_type, true)?);
        }
        Ok(match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(g.concat_rows(&parts)?),
        })
    }

    /// `Σ_v Embd^v(m^v) + pos`, one row per timestep.
    pub fn embed_parallel(&self, g: &mut Graph<'_, T>, tokens: &TokenGrid) -> Result<Var> {
        self.check_grid(tokens)?;
        let t = tokens.length();
        let mut acc = self.positions(g, &(0..t).collect::<Vec<_>>())?;
        for (v, e) in self.embeds.iter().enumerate() {
            let ids: Vec<usize> = tokens.stream(v).iter().map(|&c| c as usize).collect();
            let x = e.forward(g, &ids)?;
            acc = g.add(acc, x)?;
        }
        Ok(acc)
    }

    /// Token embeddings along the stream-major line, without positions.
    fn embed_line(&self, g: &mut Graph<'_, T>, tokens: &TokenGrid) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.embeds.len());
        for (v, e) in self.embeds.iter().enumerate() {
            let ids: Vec<usize> = tokens.stream(v).iter().map(|&c| c as usize).collect();
            parts.push(e.forward(g, &ids)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat_rows(&parts)
        }
    }

    fn line_positions(&self, g: &mut Graph<'_, T>, t: usize, rows: usize) -> Result<Var> {
        let pos = self.positions(g, &(0..rows).map(|p| p % t).collect::<Vec<_>>())?;
        let sid = g.param(self.stream_id);
        let sid = g.gather_rows(sid, &(0..rows).map(|p| p / t).collect::<Vec<_>>())?;
        g.add(pos, sid)
    }

    /// Input rows of the backbone for `layout`. For the autoregressive layout
    /// `rows` limits the line to its first `rows` positions.
    fn token_rows(&self, g: &mut Graph<'_, T>, tokens: &TokenGrid, layout: Layout, rows: Option<usize>) -> Result<Var> {
        self.check_grid(tokens)?;
        let t = tokens.length();
        let n = t * self.config.streams;
        match layout {
            Layout::Parallel => self.embed_parallel(g, tokens),
            Layout::Flatten => {
                let e = self.embed_line(g, tokens)?;
                let p = self.line_positions(g, t, n)?;
                g.add(e, p)
            }
            Layout::Autoregressive => {
                let rows = rows.unwrap_or(n);
                if rows == 0 || rows > n {
                    return Err(invalid!("autoregressive prefix of {rows} rows for a line of {n}"));
                }
                let bos = g.param(self.embeds[0].table);
                let bos = g.gather_rows(bos, &[self.config.mask_id() as usize])?;
                let e = if rows > 1 {
                    let line = self.embed_line(g, tokens)?;
                    let shifted = g.slice_rows(line, 0, rows - 1)?;
                    g.concat_rows(&[bos, shifted])?
                } else {
                    bos
                };
                let p = self.line_positions(g, t, rows)?;
                g.add(e, p)
            }
        }
    }

    /// Prefix rows attend to the prefix only; token rows attend to the
    /// prefix and to earlier-or-equal token rows.
    fn ar_mask(prefix: usize, rows: usize) -> AttentionMask {
        let n = prefix + rows;
        std::rc::Rc::new(
            (0..n * n)
                .map(|k| {
                    let (i, j) = (k / n, k % n);
                    if i < prefix {
                        j < prefix
                    } else {
                        j <= i
                    }
                })
                .collect(),
        )
    }

    /// Final-normed backbone output for the token rows only.
    pub fn hidden(
        &self,
        g: &mut Graph<'_, T>,
        conds: &ConditionSet<T>,
        tokens: &TokenGrid,
        layout: Layout,
        rows: Option<usize>,
    ) -> Result<Var> {
        let x = self.token_rows(g, tokens, layout, rows)?;
        let n = g.value(x).rows();
        let prefix = self.prefix(g, conds)?;
        let p = prefix.map_or(0, |v| g.value(v).rows());
        let mut h = match prefix {
            Some(pre) => g.concat_rows(&[pre, x])?,
            None => x,
        };
        let mask = (layout == Layout::Autoregressive).then(|| Self::ar_mask(p, n));
        for b in &self.blocks {
            h = b.forward(g, h, mask.as_ref())?;
        }
        let h = if p > 0 { g.slice_rows(h, p, n)? } else { h };
        self.norm.forward(g, h)
    }

    /// Logits over `|C|` codes for stream `v` on the given hidden rows.
    pub fn head_logits(&self, g: &mut Graph<'_, T>, h: Var, v: usize) -> Result<Var> {
        let head = self
            .heads
            .get(v)
            .ok_or_else(|| invalid!("no head for stream {v}"))?;
        let x = head.fc1.forward(g, h)?;
        let x = g.silu(x);
        head.fc2.forward(g, x)
    }

    /// Per-stream `t × |C|` logits. Under flattened layouts row `τ` of stream
    /// `v` comes from line position `v·t + τ`.
    pub fn stream_logits(
        &self,
        g: &mut Graph<'_, T>,
        conds: &ConditionSet<T>,
        tokens: &TokenGrid,
        layout: Layout,
    ) -> Result<Vec<Var>> {
        let t = tokens.length();
        let h = self.hidden(g, conds, tokens, layout, None)?;
        (0..self.config.streams)
            .map(|v| {
                let rows = match layout {
                    Layout::Parallel => h,
                    _ => g.slice_rows(h, v * t, t)?,
                };
                self.head_logits(g, rows, v)
            })
            .collect()
    }

    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let mut out = vec![
            ("gen.text.proj".to_string(), self.text_proj.spec()),
            ("gen.audio.proj".to_string(), self.audio_proj.spec()),
        ];
        out.extend(self.traj.specs("gen.traj.enc"));
        for (v, e) in self.embeds.iter().enumerate() {
            out.push((format!("gen.embed.stream{v}"), e.spec()));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            for (spec, part) in b.specs().into_iter().zip(["norm1", "attn", "norm2", "ff"]) {
                out.push((format!("gen.backbone.{l}.{part}"), spec));
            }
        }
        out.push(("gen.backbone.norm".into(), self.norm.spec()));
        for (v, h) in self.heads.iter().enumerate() {
            out.push((format!("gen.head.{v}.fc1"), h.fc1.spec()));
            out.push((format!("gen.head.{v}.fc2"), h.fc2.spec()));
        }
        out
    }

    pub fn checkpoint_header(&self, step: u64) -> CheckpointHeader {
        CheckpointHeader {
            step,
            meta: serde_json::json!({
                "model": "generator",
                "scalar": T::NAME,
                "config": self.config,
            }),
            layers: self.layer_specs(),
        }
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        crate::nn::save_checkpoint(path, &self.checkpoint_header(step), &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header = crate::nn::read_checkpoint_header(path)?;
        if header.meta["model"] != "generator" {
            return Err(Error::parse(path, 3, "checkpoint does not hold a generator"));
        }
        let config: GenConfig = serde_json::from_value(header.meta["config"].clone())
            .map_err(|e| Error::parse(path, 3, e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        crate::nn::load_checkpoint(path, &mut model.store)?;
        Ok(model)
    }

    /// Softmax of `z / temperature` (plain softmax when `temperature` is 1).
    pub(crate) fn softmax_row(z: &[T], temperature: f64) -> Vec<f64> {
        let max = z.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = z.iter().map(|x| ((x.as_f64() - max) / temperature).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::Tensor;

    pub(crate) fn tiny() -> GenConfig {
        GenConfig {
            width: 16,
            layers: 1,
            heads: 2,
            ff_hidden: 24,
            codebook: 12,
            streams: 3,
            max_len: 8,
            downsample: 2,
            text_width: 4,
            audio_width: 2,
            ..GenConfig::default()
        }
    }

    fn grid(seed: u32) -> TokenGrid {
        TokenGrid::new(3, 5, (0..15).map(|i| (i * 7 + seed) % 12).collect()).unwrap()
    }

    fn conds() -> ConditionSet<f64> {
        ConditionSet {
            text: Some(Tensor::matrix(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap()),
            audio: Some(Tensor::matrix(10, 2, (0..20).map(|i| (i % 3) as f64).collect()).unwrap()),
            trajectory: Some(Tensor::matrix(10, 3, (0..30).map(|i| i as f64 * 0.1).collect()).unwrap()),
        }
    }

    #[test]
    fn stream_embeddings_are_additive() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let tokens = grid(1);
        let mut g = Graph::new(&model.store);
        let e = model.embed_parallel(&mut g, &tokens).unwrap();
        let got = g.value(e).clone();
        let mut expect = model.store.value(model.pos).data()[..5 * 16].to_vec();
        for v in 0..3 {
            let table = model.store.value(model.embeds[v].table);
            for t in 0..5 {
                let row = table.row(tokens.get(v, t) as usize);
                for (x, y) in expect[t * 16..(t + 1) * 16].iter_mut().zip(row) {
                    *x += y;
                }
            }
        }
        assert_eq!(got.data(), expect.as_slice());
    }

    #[test]
    fn logit_shapes_and_prefix_lengths() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        for layout in [Layout::Parallel, Layout::Flatten, Layout::Autoregressive] {
            let mut g = Graph::new(&model.store);
            let out = model.stream_logits(&mut g, &conds(), &grid(0), layout).unwrap();
            assert_eq!(out.len(), 3);
            for v in out {
                assert_eq!(g.value(v).shape(), &[5, 12]);
            }
        }
        let mut g = Graph::new(&model.store);
        let p = model.prefix(&mut g, &conds()).unwrap().unwrap();
        assert_eq!(g.value(p).rows(), 1 + 5 + 5);
        assert!(model.prefix(&mut g, &ConditionSet::empty()).unwrap().is_none());
        // Unconditional generation still runs.
        model.stream_logits(&mut g, &ConditionSet::empty(), &grid(0), Layout::Parallel).unwrap();
    }

    #[test]
    fn fully_masked_input_ignores_original_tokens() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let masked = TokenGrid::filled(3, 5, 12);
        let mut g = Graph::new(&model.store);
        let a = model.embed_parallel(&mut g, &masked).unwrap();
        let b = model.embed_parallel(&mut g, &masked).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(model.embed_parallel(&mut g, &TokenGrid::filled(3, 5, 13)).is_err());
    }

    #[test]
    fn heads_are_independent() {
        let mut model = Generator::<f64>::new(tiny(), 0).unwrap();
        let run = |m: &Generator<f64>| {
            let mut g = Graph::new(&m.store);
            let out = m.stream_logits(&mut g, &conds(), &grid(2), Layout::Parallel).unwrap();
            out.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
        };
        let before = run(&model);
        let w = model.heads[0].fc2.weight;
        model.store.get_mut(w).value.data_mut()[0] += 1.0;
        let after = run(&model);
        assert_ne!(before[0], after[0]);
        assert_eq!(before[1], after[1]);
        assert_eq!(before[2], after[2]);
    }

    #[test]
    fn autoregressive_rows_ignore_later_tokens() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let a = grid(0);
        let mut b = a.clone();
        b.set(2, 4, 0);
        b.set(1, 3, 5);
        let run = |tokens: &TokenGrid| {
            let mut g = Graph::new(&model.store);
            let h = model.hidden(&mut g, &conds(), tokens, Layout::Autoregressive, None).unwrap();
            g.value(h).clone()
        };
        let (ha, hb) = (run(&a), run(&b));
        // Line position of (1, 3) is 8; rows up to and including it see only earlier tokens.
        for r in 0..=8 {
            assert_eq!(ha.row(r), hb.row(r), "row {r}");
        }
        assert_ne!(ha.row(9), hb.row(9));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gen.ckpt");
        let model = Generator::<f64>::new(tiny(), 3).unwrap();
        model.save(&p, 5).unwrap();
        let back = Generator::<f64>::load(&p).unwrap();
        for ((_, a), (_, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }
}
