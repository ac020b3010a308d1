use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReconstructionSummary, TokenizerConfig, TokenizerModel};
use crate::error::{invalid, Error, Result};
use crate::metrics::mpjpe;
use crate::motion::{DatasetManifest, MotionSequence};
use crate::nn::{AdamW, AdamWConfig, Graph, MultiStep, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Checkpoint path and cadence in epochs.
    pub checkpoint: Option<(&'a Path, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerReport {
    /// Evaluation loss on fixed crops before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
}

/// Largest prefix whose length is a multiple of `ds`, capped at `crop`.
fn fixed_crop<T: Scalar>(m: &MotionSequence<T>, crop: usize, ds: usize) -> Result<MotionSequence<T>> {
    let len = crop.min(m.frames() / ds * ds);
    if len == 0 {
        return Err(invalid!("sequence of {} frames is shorter than the downsample factor {ds}", m.frames()));
    }
    m.slice(0..len)
}

fn eval_loss<T: Scalar>(model: &TokenizerModel<T>, crops: &[Tensor<T>]) -> Result<f64> {
    let mut total = 0.0;
    for x in crops {
        let mut g = Graph::new(&model.store);
        let xv = g.input(x.clone());
        let (_, y) = model.autoencode(&mut g, xv)?;
        let l = g.mse(y, x.clone())?;
        total += g.value(l).data()[0].as_f64();
    }
    Ok(total / crops.len() as f64)
}

/// Trains a fresh tokenizer on in-memory motions.
pub fn train_tokenizer_on<T: Scalar>(
    motions: &[MotionSequence<T>],
    config: &TokenizerConfig,
    seed: u64,
    opts: &TrainOptions<'_>,
) -> Result<(TokenizerModel<T>, TokenizerReport)> {
    config.validate()?;
    let first = motions.first().ok_or_else(|| invalid!("no training sequences"))?;
    let mut model = TokenizerModel::new(config.clone(), first.skeleton().clone(), seed)?;
    let feats: Vec<Vec<T>> = motions.iter().map(|m| m.features()).collect();
    model.fit_normalization(&feats.iter().map(|f| f.as_slice()).collect::<Vec<_>>())?;

    let ds = config.downsample;
    let tc = &config.train;
    let eval_crops = motions
        .iter()
        .map(|m| model.normalized_features(&fixed_crop(m, tc.crop, ds)?))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = eval_loss(&model, &eval_crops)?;
    log::info!("tokenizer: {} parameters, initial loss {initial_loss:.5}", model.store.numel());

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70CE);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: tc.weight_decay,
        ..AdamWConfig::default()
    });
    let sched = MultiStep {
        base: tc.lr,
        milestones: tc.milestones.clone(),
        factor: tc.decay,
    };
    let mut order: Vec<usize> = (0..motions.len()).collect();
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut step = 0u64;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let base_lr = sched.lr(epoch as u64);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let mut inputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let m = &motions[i];
                let len = tc.crop.min(m.frames() / ds * ds);
                if len == 0 {
                    continue;
                }
                let start = rng.random_range(0..=m.frames() - len);
                inputs.push(model.normalized_features(&m.slice(start..start + len)?)?);
            }
            if inputs.is_empty() {
                continue;
            }
            let n = inputs.len();
            let mut g = Graph::new(&model.store);
            let mut losses = Vec::with_capacity(n);
            for x in inputs {
                let xv = g.input(x.clone());
                let (_, y) = model.autoencode(&mut g, xv)?;
                losses.push(g.mse(y, x)?);
            }
            let total = g.concat_rows(&losses)?;
            let loss = g.mean(total);
            let value = g.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "tokenizer loss became {value} at epoch {epoch}; last checkpoint kept"
                )));
            }
            let mut grads = g.backward(loss)?;
            drop(g);
            grads.clip_global_norm(T::lit(tc.grad_clip));
            step += 1;
            let warm = if tc.warmup_steps > 0 {
                (step as f64 / tc.warmup_steps as f64).min(1.0)
            } else {
                1.0
            };
            opt.step(&mut model.store, &grads, base_lr * warm)?;
            sum += value;
            batches += 1;
        }
        let loss = sum / batches.max(1) as f64;
        log::info!("tokenizer epoch {epoch}: loss {loss:.5} lr {base_lr:.2e}");
        epochs.push(EpochLog {
            epoch,
            loss,
            lr: base_lr,
        });
        if let Some((path, every)) = opts.checkpoint {
            if every > 0 && (epoch + 1) % every == 0 {
                model.save(path, step)?;
            }
        }
    }
    let final_loss = eval_loss(&model, &eval_crops)?;
    if let Some((path, _)) = opts.checkpoint {
        model.save(path, step)?;
    }
    Ok((
        model,
        TokenizerReport {
            initial_loss,
            final_loss,
            epochs,
            steps: step,
        },
    ))
}

/// Trains a tokenizer on every motion of a manifest.
pub fn train_tokenizer<T: Scalar>(
    manifest: &DatasetManifest,
    config: &TokenizerConfig,
    seed: u64,
    opts: &TrainOptions<'_>,
) -> Result<(TokenizerModel<T>, TokenizerReport)> {
    if manifest.is_empty() {
        return Err(invalid!("manifest has no entries"));
    }
    let motions = manifest
        .entries
        .iter()
        .map(|e| manifest.load_motion(e))
        .collect::<Result<Vec<_>>>()?;
    train_tokenizer_on(&motions, config, seed, opts)
}

/// MPJPE of `detokenize(tokenize(m))` against `m`, each sequence cropped to
/// the largest multiple of the downsample factor.
pub fn eval_reconstruction<T: Scalar>(
    model: &TokenizerModel<T>,
    motions: &[MotionSequence<T>],
) -> Result<ReconstructionSummary> {
    if motions.is_empty() {
        return Err(invalid!("no sequences to evaluate"));
    }
    let ds = model.config().downsample;
    let mut per_sequence_mm = Vec::with_capacity(motions.len());
    for m in motions {
        if m.skeleton().as_ref() != model.skeleton().as_ref() {
            return Err(invalid!("skeleton mismatch between motion and tokenizer"));
        }
        let m = fixed_crop(m, usize::MAX, ds)?;
        per_sequence_mm.push(mpjpe(&m, &model.reconstruct(&m)?)?);
    }
    Ok(ReconstructionSummary {
        mean_mpjpe_mm: per_sequence_mm.iter().sum::<f64>() / per_sequence_mm.len() as f64,
        per_sequence_mm,
    })
}
