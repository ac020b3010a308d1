//! Motion tokenizer: temporal conv encoder, residual FSQ bottleneck, decoder.

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rfsq::RfsqSpec;

pub use model::{ReconstructionSummary, TokenizerModel};
pub use train::{eval_reconstruction, train_tokenizer, train_tokenizer_on, EpochLog, TokenizerReport, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Temporal downsampling factor; a power of two.
    pub downsample: usize,
    pub width: usize,
    /// Residual blocks per resolution stage.
    pub res_blocks: usize,
    pub heads: usize,
    /// FSQ levels per latent dimension; the latent width is their count.
    pub levels: Vec<u32>,
    /// Residual depth (number of token streams).
    pub depth: usize,
    pub train: TokenizerTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<u64>,
    pub decay: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Training crop length in frames; a multiple of the downsample factor.
    pub crop: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            downsample: 4,
            width: 32,
            res_blocks: 1,
            heads: 2,
            levels: vec![8, 8, 8, 4],
            depth: 4,
            train: TokenizerTrainConfig::default(),
        }
    }
}

impl Default for TokenizerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 2e-3,
            milestones: vec![30, 42],
            decay: 0.3,
            warmup_steps: 50,
            weight_decay: 0.0,
            grad_clip: 1.0,
            crop: 64,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample == 0 || !self.downsample.is_power_of_two() {
            return Err(invalid!("downsample factor {} must be a power of two", self.downsample));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(invalid!("width {} must be a positive multiple of heads {}", self.width, self.heads));
        }
        let t = &self.train;
        if t.crop == 0 || t.crop % self.downsample != 0 {
            return Err(invalid!(
                "crop {} must be a positive multiple of the downsample factor {}",
                t.crop,
                self.downsample
            ));
        }
        if t.batch_size == 0 || !(t.lr > 0.0) || !(t.decay > 0.0) || !(t.grad_clip > 0.0) {
            return Err(invalid!("batch size, lr, decay and grad_clip must be positive"));
        }
        self.rfsq()?;
        Ok(())
    }

    pub fn rfsq(&self) -> Result<RfsqSpec> {
        RfsqSpec::new(self.levels.clone(), self.depth)
    }
}
