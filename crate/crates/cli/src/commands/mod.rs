//! Pipeline commands. Each reads upstream artifacts from the output
//! directory and writes its own under `<output>/<stage>`.

mod data;
mod eval;
mod train;

pub use data::{curate, synth};
pub use eval::{ablate_decoding, evaluate, generate, GenerateArgs};
pub use train::{tokenize, train_gen, train_tokenizer};

use anyhow::Result;

use crate::artifacts::Artifacts;
use crate::config::RunConfig;

/// Resolved configuration and artifact layout shared by the commands.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: RunConfig,
    pub art: Artifacts,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let art = Artifacts::new(&cfg);
        Self { cfg, art }
    }
}

/// Runs synth, curate, train-tokenizer, tokenize, train-gen and evaluate.
pub fn pipeline(ctx: &Ctx) -> Result<()> {
    synth(ctx)?;
    curate(ctx)?;
    train_tokenizer(ctx)?;
    tokenize(ctx)?;
    train_gen(ctx)?;
    evaluate(ctx)
}
