use anyhow::Result;
use log::info;
use motiongen_core::maskgen::train_generator;
use motiongen_core::rfsq::write_tokens;
use motiongen_core::tokenizer::{self, eval_reconstruction, TokenizerReport, TrainOptions};
use serde::Serialize;

use super::Ctx;
use crate::artifacts::{crop_motion, write_json, S};

/// Checkpoint cadence during tokenizer training, in epochs.
const CHECKPOINT_EVERY: usize = 10;

#[derive(Serialize)]
struct TokenizerSummary<'a> {
    train: &'a TokenizerReport,
    test_mpjpe_mm: f64,
}

pub fn train_tokenizer(ctx: &Ctx) -> Result<()> {
    let train = ctx.art.load_split("train")?;
    let test = ctx.art.load_split("test")?;
    let dir = ctx.art.stage_dir("tokenizer", &ctx.cfg)?;
    let ckpt = ctx.art.tokenizer();
    info!("training tokenizer on {} sequences", train.len());
    let opts = TrainOptions {
        checkpoint: Some((&ckpt, CHECKPOINT_EVERY)),
    };
    let (model, report) = tokenizer::train_tokenizer::<S>(&train, &ctx.cfg.tokenizer, ctx.cfg.stage_seed("tokenizer"), &opts)?;
    model.save(&ckpt, report.steps)?;
    let motions = test.entries.iter().map(|e| test.load_motion::<S>(e)).collect::<Result<Vec<_>, _>>()?;
    let recon = eval_reconstruction(&model, &motions)?;
    info!(
        "tokenizer loss {:.5} -> {:.5}, test MPJPE {:.2} mm",
        report.initial_loss, report.final_loss, recon.mean_mpjpe_mm
    );
    write_json(
        &dir.join("report.json"),
        &TokenizerSummary {
            train: &report,
            test_mpjpe_mm: recon.mean_mpjpe_mm,
        },
    )
}

/// Tokenizes both splits, each motion cut to a whole number of tokens.
pub fn tokenize(ctx: &Ctx) -> Result<()> {
    let model = ctx.art.load_tokenizer()?;
    ctx.art.stage_dir("tokens", &ctx.cfg)?;
    let ds = model.config().downsample;
    for split in ["train", "test"] {
        let manifest = ctx.art.load_split(split)?;
        for e in &manifest.entries {
            let m = crop_motion(&manifest.load_motion::<S>(e)?, ds, usize::MAX)?;
            write_tokens(&ctx.art.tokens(&e.id), &model.tokenize(&m)?, model.rfsq())?;
        }
        info!("tokenized {} {split} sequences", manifest.len());
    }
    Ok(())
}

pub fn train_gen(ctx: &Ctx) -> Result<()> {
    let tok = ctx.art.load_tokenizer()?;
    let train = ctx.art.load_split("train")?;
    let samples = ctx.art.load_samples(&train, &tok, ctx.cfg.generator.max_len)?;
    let dir = ctx.art.stage_dir("generator", &ctx.cfg)?;
    info!("training generator on {} samples", samples.len());
    let ckpt = ctx.art.generator();
    let (_, report) = train_generator::<S>(
        &samples,
        &ctx.cfg.generator,
        &ctx.cfg.curriculum,
        ctx.cfg.stage_seed("generator"),
        Some(&ckpt),
    )?;
    info!("generator final loss {:?}", report.final_loss());
    write_json(&dir.join("report.json"), &report)
}
