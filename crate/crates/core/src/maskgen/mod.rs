//! Masked multi-stream token generator.
//!
//! Each motion is `V+1` parallel token streams. Training masks whole
//! timesteps across all streams at once, sums one embedding per stream,
//! runs a bidirectional transformer with the condition features as a prefix,
//! and predicts every stream with its own head. Two flattened layouts (masked
//! and autoregressive) are supported for comparison.

mod decode;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rfsq::TokenGrid;

pub use decode::{generate, DecodeStats};
pub use model::{Generator, Layout};
pub use train::{
    eval_masked_ce, masked_ce_loss, train_generator, train_stage, GenReport, GenSample, Sampling, StageLog,
    TrainEpochLog,
};

/// Decoding strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Causal, one token per pass over the stream-major flattened line.
    ArFlatten,
    /// Iterative masked decoding over the flattened line.
    MaskFlatten,
    /// Iterative masked decoding of all streams per timestep.
    MaskParallel,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::ArFlatten, Strategy::MaskFlatten, Strategy::MaskParallel];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ArFlatten => "ar_flatten",
            Strategy::MaskFlatten => "mask_flatten",
            Strategy::MaskParallel => "mask_parallel",
        }
    }

    pub fn layout(self) -> Layout {
        match self {
            Strategy::ArFlatten => Layout::Autoregressive,
            Strategy::MaskFlatten => Layout::Flatten,
            Strategy::MaskParallel => Layout::Parallel,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown decoding strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskSchedule {
    /// Masked count after iteration `s` of `S`: `floor(n · cos(π/2 · s/S))`.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub iterations: usize,
    /// Sampling temperature; at or below `1e-6` decoding is greedy.
    pub temperature: f64,
    pub schedule: MaskSchedule,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::MaskParallel,
            iterations: 10,
            temperature: 0.0,
            schedule: MaskSchedule::Cosine,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("decoding needs at least one iteration".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be finite and non-negative, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Training layouts, one drawn at random per sample. Parallel only for the main model;
    /// the decoding ablation mixes all three.
    pub objectives: Vec<Strategy>,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 2e-3,
            lr_floor: 1e-5,
            warmup_steps: 50,
            weight_decay: 0.0,
            grad_clip: 1.0,
            objectives: vec![Strategy::MaskParallel],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Codebook size `|C|`; the vocabulary adds one MASK id equal to `|C|`.
    pub codebook: u32,
    /// Number of token streams `V+1`.
    pub streams: usize,
    /// Longest token sequence (and longest audio/trajectory prefix).
    pub max_len: usize,
    /// Frames per token, matching the tokenizer.
    pub downsample: usize,
    pub text_width: usize,
    pub audio_width: usize,
    pub train: GenTrainConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 64,
            layers: 2,
            heads: 4,
            ff_hidden: 128,
            codebook: 2048,
            streams: 4,
            max_len: 32,
            downsample: 4,
            text_width: 8,
            audio_width: crate::motion::synth::AUDIO_WIDTH,
            train: GenTrainConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn vocab(&self) -> usize {
        self.codebook as usize + 1
    }

    pub fn mask_id(&self) -> u32 {
        self.codebook
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.width,
            self.layers,
            self.heads,
            self.ff_hidden,
            self.streams,
            self.max_len,
            self.downsample,
            self.text_width,
            self.audio_width,
        ];
        if dims.contains(&0) || self.codebook < 2 {
            return Err(invalid!("generator dimensions must be positive and the codebook at least 2"));
        }
        if self.width % self.heads != 0 {
            return Err(invalid!("{} heads do not divide width {}", self.heads, self.width));
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) || t.lr_floor < 0.0 || t.lr_floor > t.lr || t.objectives.is_empty() {
            return Err(invalid!("invalid generator training settings"));
        }
        Ok(())
    }
}

/// Token grids with a consistent timestep mask applied.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// Inputs: originals with MASK at every masked timestep of every stream.
    pub tokens: Vec<TokenGrid>,
    pub targets: Vec<TokenGrid>,
    /// Per element, which timesteps are masked.
    pub mask_positions: Vec<Vec<bool>>,
    pub mask_id: u32,
}

impl MaskedBatch {
    /// Every stream carries MASK exactly at the masked timesteps.
    pub fn check_consistency(&self) -> Result<()> {
        for (grid, mask) in self.tokens.iter().zip(&self.mask_positions) {
            for v in 0..grid.depth() {
                for (t, &m) in mask.iter().enumerate() {
                    if (grid.get(v, t) == self.mask_id) != m {
                        return Err(invalid!("stream {v} disagrees with the timestep mask at {t}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Masks `ceil(ratio · t)` timesteps per element, drawn uniformly without
/// replacement, in every stream at once.
pub fn apply_consistent_mask(
    tokens: &[TokenGrid],
    ratio: f64,
    mask_id: u32,
    rng: &mut impl Rng,
) -> Result<MaskedBatch> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(invalid!("mask ratio {ratio} is outside [0, 1]"));
    }
    let mut out = MaskedBatch {
        tokens: Vec::with_capacity(tokens.len()),
        targets: tokens.to_vec(),
        mask_positions: Vec::with_capacity(tokens.len()),
        mask_id,
    };
    for grid in tokens {
        if grid.codes().contains(&mask_id) {
            return Err(invalid!("input grid already contains the MASK id"));
        }
        let t = grid.length();
        let n = ((ratio * t as f64).ceil() as usize).min(t);
        let mut mask = vec![false; t];
        for i in sample(rng, t, n) {
            mask[i] = true;
        }
        out.tokens.push(mask_timesteps(grid, &mask, mask_id));
        out.mask_positions.push(mask);
    }
    Ok(out)
}

pub(crate) fn mask_timesteps(grid: &TokenGrid, mask: &[bool], mask_id: u32) -> TokenGrid {
    let mut g = grid.clone();
    for v in 0..g.depth() {
        for (t, &m) in mask.iter().enumerate() {
            if m {
                g.set(v, t, mask_id);
            }
        }
    }
    g
}

/// Training mask ratio `cos(π u / 2)` for `u ~ U(0, 1)`.
pub fn sample_mask_ratio(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    (std::f64::consts::FRAC_PI_2 * u).cos()
}

/// Number of positions still masked after iteration `step` (1-based) of `total`.
pub fn remaining_masked(n: usize, step: usize, total: usize) -> usize {
    let frac = (std::f64::consts::FRAC_PI_2 * step as f64 / total as f64).cos();
    ((n as f64 * frac).floor() as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TokenGrid {
        TokenGrid::new(3, 5, (0..15).collect()).unwrap()
    }

    #[test]
    fn full_and_empty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = apply_consistent_mask(&[grid()], 1.0, 99, &mut rng).unwrap();
        assert!(full.tokens[0].codes().iter().all(|&c| c == 99));
        let none = apply_consistent_mask(&[grid()], 0.0, 99, &mut rng).unwrap();
        assert_eq!(none.tokens[0], grid());
        assert!(apply_consistent_mask(&[grid()], 1.5, 99, &mut rng).is_err());
    }

    #[test]
    fn masks_are_consistent_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = sample_mask_ratio(&mut rng);
            let b = apply_consistent_mask(&[grid(), grid()], r, 99, &mut rng).unwrap();
            b.check_consistency().unwrap();
            for m in &b.mask_positions {
                assert_eq!(m.iter().filter(|&&x| x).count(), (r * 5.0).ceil() as usize);
            }
        }
    }

    #[test]
    fn cosine_schedule_ends_fully_committed() {
        assert_eq!(remaining_masked(16, 0, 10), 16);
        assert_eq!(remaining_masked(16, 10, 10), 0);
        let seq: Vec<_> = (0..=10).map(|s| remaining_masked(16, s, 10)).collect();
        assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn strategy_tags_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("beam".parse::<Strategy>(), Err(Error::Config(_))));
    }
}
