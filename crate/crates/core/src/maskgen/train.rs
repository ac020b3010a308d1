use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{apply_consistent_mask, sample_mask_ratio, GenConfig, Generator, Layout, Strategy};
use crate::conditioning::{build_stage, stage_samples, ConditionSet, CurriculumConfig, EpochSample, Stage};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph, Tensor, Var, WarmupCosine};
use crate::rfsq::TokenGrid;
use crate::Scalar;

/// One training sequence: its token grid and every condition it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSample<T> {
    pub tokens: TokenGrid,
    pub conditions: ConditionSet<T>,
}

impl<T: Scalar> GenSample<T> {
    /// Crops frame-rate conditions (audio, trajectory) to `t · downsample`
    /// frames so they line up with the tokens.
    pub fn new(tokens: TokenGrid, conditions: ConditionSet<T>, downsample: usize) -> Result<Self> {
        let conditions = conditions
            .crop_frames(tokens.length() * downsample)
            .map_err(|e| invalid!("{} tokens: {e}", tokens.length()))?;
        Ok(Self { tokens, conditions })
    }

    /// Window of `len` tokens starting at `start`, with matching condition frames.
    pub fn window(&self, start: usize, len: usize, downsample: usize) -> Result<Self> {
        let t = self.tokens.length();
        if len == 0 || start + len > t {
            return Err(invalid!("window {start}+{len} outside {t} tokens"));
        }
        let mut codes = Vec::with_capacity(self.tokens.depth() * len);
        for v in 0..self.tokens.depth() {
            codes.extend_from_slice(&self.tokens.stream(v)[start..start + len]);
        }
        let frames = |m: &Tensor<T>| {
            let c = m.cols();
            Tensor::matrix(len * downsample, c, m.data()[start * downsample * c..(start + len) * downsample * c].to_vec())
        };
        Ok(Self {
            tokens: TokenGrid::new(self.tokens.depth(), len, codes)?,
            conditions: ConditionSet {
                text: self.conditions.text.clone(),
                audio: self.conditions.audio.as_ref().map(frames).transpose()?,
                trajectory: self.conditions.trajectory.as_ref().map(frames).transpose()?,
            },
        })
    }
}

/// Cross-entropy summed over streams, averaged over masked timesteps.
/// `logits[v]` is the `t × |C|` prediction for stream `v`.
pub fn masked_ce_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: &[Var],
    targets: &TokenGrid,
    mask_positions: &[bool],
) -> Result<Var> {
    if logits.len() != targets.depth() {
        return Err(invalid!("{} logit grids for {} streams", logits.len(), targets.depth()));
    }
    if mask_positions.len() != targets.length() {
        return Err(invalid!("mask of {} for {} timesteps", mask_positions.len(), targets.length()));
    }
    let n = mask_positions.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(invalid!("masked cross-entropy is undefined with no masked positions"));
    }
    let denom = T::from_usize_lossy(n);
    let mut total: Option<Var> = None;
    for (v, &z) in logits.iter().enumerate() {
        let l = g.cross_entropy(z, targets.stream(v), Some(mask_positions), denom)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one stream"))
}

/// Loss of one sample under `objective`, per timestep and summed over streams.
fn sample_loss<T: Scalar>(
    model: &Generator<T>,
    g: &mut Graph<'_, T>,
    s: &GenSample<T>,
    objective: Strategy,
    rng: &mut impl Rng,
) -> Result<Var> {
    let tokens = &s.tokens;
    let (streams, t) = (tokens.depth(), tokens.length());
    let mask_id = model.config().mask_id();
    let mut terms = Vec::with_capacity(streams);
    match objective {
        Strategy::MaskParallel => {
            let ratio = sample_mask_ratio(rng);
            let batch = apply_consistent_mask(std::slice::from_ref(tokens), ratio, mask_id, rng)?;
            let mask = &batch.mask_positions[0];
            let idx: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
            let h = model.hidden(g, &s.conditions, &batch.tokens[0], Layout::Parallel, None)?;
            let rows = g.gather_rows(h, &idx)?;
            let denom = T::from_usize_lossy(idx.len());
            for v in 0..streams {
                let z = model.head_logits(g, rows, v)?;
                let target: Vec<u32> = idx.iter().map(|&i| tokens.get(v, i)).collect();
                terms.push(g.cross_entropy(z, &target, None, denom)?);
            }
        }
        Strategy::MaskFlatten => {
            let line = streams * t;
            let ratio = sample_mask_ratio(rng);
            let n = ((ratio * line as f64).ceil() as usize).clamp(1, line);
            let mut masked = vec![false; line];
            for p in sample(rng, line, n) {
                masked[p] = true;
            }
            let mut input = tokens.clone();
            for (p, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                input.set(p / t, p % t, mask_id);
            }
            let h = model.hidden(g, &s.conditions, &input, Layout::Flatten, None)?;
            let denom = T::from_usize_lossy(n) / T::from_usize_lossy(streams);
            for v in 0..streams {
                let idx: Vec<usize> = (0..t).filter(|&i| masked[v * t + i]).map(|i| v * t + i).collect();
                if idx.is_empty() {
                    continue;
                }
                let rows = g.gather_rows(h, &idx)?;
                let z = model.head_logits(g, rows, v)?;
                let target: Vec<u32> = idx.iter().map(|&p| tokens.get(v, p % t)).collect();
                terms.push(g.cross_entropy(z, &target, None, denom)?);
            }
        }
        Strategy::ArFlatten => {
            let h = model.hidden(g, &s.conditions, tokens, Layout::Autoregressive, None)?;
            let denom = T::from_usize_lossy(t);
            for v in 0..streams {
                let rows = g.slice_rows(h, v * t, t)?;
                let z = model.head_logits(g, rows, v)?;
                terms.push(g.cross_entropy(z, tokens.stream(v), None, denom)?);
            }
        }
    }
    let mut acc = terms[0];
    for &l in &terms[1..] {
        acc = g.add(acc, l)?;
    }
    Ok(acc)
}

/// How a stage composes its epochs.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// Curriculum epoch composition for the stage.
    Curriculum(&'a CurriculumConfig),
    /// Every sample once per epoch with all of its conditions.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: Stage,
    pub trainable: usize,
    pub epochs: Vec<TrainEpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GenReport {
    pub stages: Vec<StageLog>,
    pub steps: u64,
}

impl GenReport {
    /// Loss of the last logged epoch.
    pub fn final_loss(&self) -> Option<f64> {
        self.stages.iter().rev().find_map(|s| s.epochs.last()).map(|e| e.loss)
    }
}

/// Trains one curriculum stage with a fresh optimizer. Parameters outside the
/// stage's freeze plan are not touched. On divergence the model is
/// checkpointed to `checkpoint` (if given) before the error is returned.
#[allow(clippy::too_many_arguments)]
pub fn train_stage<T: Scalar>(
    model: &mut Generator<T>,
    samples: &[GenSample<T>],
    stage: Stage,
    sampling: Sampling<'_>,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    checkpoint: Option<&Path>,
    step: &mut u64,
) -> Result<StageLog> {
    let plan = build_stage(stage, &model.store)?;
    plan.apply(&mut model.store);
    let cfg = model.config().train.clone();
    let (max_len, ds) = (model.config().max_len, model.config().downsample);
    let has_audio: Vec<bool> = samples.iter().map(|s| s.conditions.audio.is_some()).collect();
    let plans: Vec<Vec<EpochSample>> = (0..epochs)
        .map(|_| match sampling {
            Sampling::Curriculum(c) => stage_samples(stage, &has_audio, c, rng),
            Sampling::Full => Ok((0..samples.len())
                .map(|index| EpochSample {
                    index,
                    modalities: samples[index].conditions.present(),
                })
                .collect()),
        })
        .collect::<Result<_>>()?;
    let total: u64 = plans.iter().map(|p| p.len().div_ceil(cfg.batch_size) as u64).sum();
    let mut log = StageLog {
        stage,
        trainable: model.store.trainable_numel(),
        epochs: Vec::with_capacity(epochs),
    };
    if total == 0 {
        log::warn!("stage {stage}: no samples; skipped");
        return Ok(log);
    }
    let warmup = cfg.warmup_steps.min(total / 4);
    let sched = WarmupCosine::new(warmup, total, cfg.lr, cfg.lr_floor)?;
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut k = 0u64;
    for (epoch, mut plan) in plans.into_iter().enumerate() {
        plan.shuffle(rng);
        let (mut sum, mut count) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in plan.chunks(cfg.batch_size) {
            let mut g = Graph::new(&model.store);
            let mut losses = Vec::with_capacity(batch.len());
            for es in batch {
                let full = &samples[es.index];
                let mut s = GenSample {
                    tokens: full.tokens.clone(),
                    conditions: full.conditions.restrict(&es.modalities),
                };
                if s.tokens.length() > max_len {
                    let start = rng.random_range(0..=s.tokens.length() - max_len);
                    s = s.window(start, max_len, ds)?;
                }
                let objective = cfg.objectives[rng.random_range(0..cfg.objectives.len())];
                losses.push(sample_loss(model, &mut g, &s, objective, rng)?);
            }
            let all = g.concat_rows(&losses)?;
            let loss = g.mean(all);
            let value = g.value(loss).data()[0].as_f64();
            let grads = if value.is_finite() {
                let mut gr = g.backward(loss)?;
                gr.clip_global_norm(T::lit(cfg.grad_clip));
                Some(gr)
            } else {
                None
            };
            drop(g);
            k += 1;
            lr = sched.lr(k);
            let stepped = match grads {
                Some(gr) => opt.step(&mut model.store, &gr, lr),
                None => Err(Error::Diverged(format!("generator loss became {value} in stage {stage}, epoch {epoch}"))),
            };
            if let Err(e) = stepped {
                if let Some(p) = checkpoint {
                    model.save(p, *step)?;
                }
                return Err(e);
            }
            *step += 1;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let loss = sum / count.max(1) as f64;
        log::info!("generator stage {stage} epoch {epoch}: loss {loss:.4} lr {lr:.2e} samples {count}");
        log.epochs.push(TrainEpochLog {
            epoch,
            loss,
            lr,
            samples: count,
        });
    }
    Ok(log)
}

/// Runs stages I, II and III in order, each with a fresh optimizer.
pub fn train_generator<T: Scalar>(
    samples: &[GenSample<T>],
    config: &GenConfig,
    curriculum: &CurriculumConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Generator<T>, GenReport)> {
    curriculum.validate()?;
    if samples.is_empty() {
        return Err(invalid!("no training samples"));
    }
    let mut model = Generator::new(config.clone(), seed)?;
    for s in samples {
        if s.tokens.depth() != config.streams {
            return Err(invalid!(
                "sample has {} streams; the generator is configured for {}",
                s.tokens.depth(),
                config.streams
            ));
        }
        s.tokens.check_range(config.codebook)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E4E);
    let mut report = GenReport::default();
    for (stage, &epochs) in Stage::ALL.into_iter().zip(&curriculum.stage_epochs) {
        let log = train_stage(
            &mut model,
            samples,
            stage,
            Sampling::Curriculum(curriculum),
            epochs,
            &mut rng,
            checkpoint,
            &mut report.steps,
        )?;
        report.stages.push(log);
    }
    model.store.set_trainable(|_| true);
    if let Some(p) = checkpoint {
        model.save(p, report.steps)?;
    }
    Ok((model, report))
}

/// Mean masked cross-entropy (parallel layout) over `samples`, with
/// `draws` seeded training-style masks per sample.
pub fn eval_masked_ce<T: Scalar>(model: &Generator<T>, samples: &[GenSample<T>], draws: usize, seed: u64) -> Result<f64> {
    if samples.is_empty() || draws == 0 {
        return Err(invalid!("nothing to evaluate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask_id = model.config().mask_id();
    let mut total = 0.0;
    for s in samples {
        for _ in 0..draws {
            let ratio = sample_mask_ratio(&mut rng);
            let b = apply_consistent_mask(std::slice::from_ref(&s.tokens), ratio, mask_id, &mut rng)?;
            let mut g = Graph::new(&model.store);
            let logits = model.stream_logits(&mut g, &s.conditions, &b.tokens[0], Layout::Parallel)?;
            let l = masked_ce_loss(&mut g, &logits, &s.tokens, &b.mask_positions[0])?;
            total += g.value(l).data()[0].as_f64();
        }
    }
    Ok(total / (samples.len() * draws) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::model::tests::tiny;

    fn logits_from(rows: &[Vec<f64>]) -> Tensor<f64> {
        let c = rows[0].len();
        Tensor::matrix(rows.len(), c, rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_cost_log_codebook_per_stream() {
        let store = crate::nn::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let logits: Vec<Var> = (0..4).map(|_| g.input(Tensor::zeros(vec![16, 2048]))).collect();
        let targets = TokenGrid::new(4, 16, (0..64).map(|i| (i * 31) % 2048).collect()).unwrap();
        let mut mask = vec![false; 16];
        mask[3] = true;
        mask[9] = true;
        let l = masked_ce_loss(&mut g, &logits, &targets, &mask).unwrap();
        let expect = 4.0 * (2048f64).ln();
        assert!((g.value(l).data()[0] - expect).abs() < 1e-9);
        assert!((expect - 30.4985).abs() < 1e-3);
        assert!(masked_ce_loss(&mut g, &logits, &targets, &[false; 16]).is_err());
    }

    #[test]
    fn confident_correct_logits_cost_nothing_and_unmasked_rows_get_no_gradient() {
        let store = crate::nn::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let targets = TokenGrid::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let mut vars = Vec::new();
        for v in 0..2 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|t| (0..3).map(|c| if c as u32 == targets.get(v, t) { 60.0 } else { -60.0 }).collect())
                .collect();
            vars.push(g.input(logits_from(&rows)));
        }
        let mask = [true, false, true];
        let l = masked_ce_loss(&mut g, &vars, &targets, &mask).unwrap();
        assert!(g.value(l).data()[0] < 1e-40);

        // Gradient locality, via a weight feeding each logit grid.
        let mut store = crate::nn::ParamStore::<f64>::new();
        let ids: Vec<_> = (0..2)
            .map(|v| store.add(format!("z{v}"), Tensor::full(vec![3, 3], 0.3), true).unwrap())
            .collect();
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let l = masked_ce_loss(&mut g, &vars, &targets, &mask).unwrap();
        let grads = g.backward(l).unwrap();
        for &id in &ids {
            let gr = grads.get(id).unwrap();
            assert!(gr.row(1).iter().all(|&x| x == 0.0));
            assert!(gr.row(0).iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn unmasked_logits_do_not_change_the_loss() {
        let store = crate::nn::ParamStore::<f64>::new();
        let targets = TokenGrid::new(1, 2, vec![1, 0]).unwrap();
        let eval = |second: Vec<f64>| {
            let mut g = Graph::new(&store);
            let z = g.input(logits_from(&[vec![0.1, 0.5], second]));
            let l = masked_ce_loss(&mut g, &[z], &targets, &[true, false]).unwrap();
            g.value(l).data()[0]
        };
        assert_eq!(eval(vec![0.0, 0.0]), eval(vec![9.0, -3.0]));
    }

    fn samples() -> Vec<GenSample<f64>> {
        (0..3)
            .map(|k| {
                let tokens = TokenGrid::new(3, 4, (0..12).map(|i| (i * 5 + k) % 12).collect()).unwrap();
                let mut text = vec![0.0; 4];
                text[k as usize] = 1.0;
                let conditions = ConditionSet {
                    text: Some(Tensor::matrix(1, 4, text).unwrap()),
                    audio: (k == 0).then(|| Tensor::full(vec![8, 2], 0.5)),
                    trajectory: Some(Tensor::matrix(8, 3, (0..24).map(|i| i as f64 * 0.01 * (k + 1) as f64).collect()).unwrap()),
                };
                GenSample::new(tokens, conditions, 2).unwrap()
            })
            .collect()
    }

    #[test]
    fn every_objective_trains() {
        let mut cfg = tiny();
        cfg.train.objectives = Strategy::ALL.to_vec();
        cfg.train.batch_size = 3;
        let mut model = Generator::<f64>::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut step = 0;
        let log = train_stage(&mut model, &samples(), Stage::III, Sampling::Full, 30, &mut rng, None, &mut step).unwrap();
        let first = log.epochs[0].loss;
        let last = log.epochs.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(step, 30);
    }

    #[test]
    fn stage_two_leaves_backbone_bit_identical() {
        let cfg = tiny();
        let mut model = Generator::<f64>::new(cfg, 2).unwrap();
        let before = model.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut step = 0;
        let cur = CurriculumConfig::default();
        train_stage(&mut model, &samples(), Stage::II, Sampling::Curriculum(&cur), 3, &mut rng, None, &mut step).unwrap();
        let mut changed = 0;
        for ((_, a), (_, b)) in before.iter().zip(model.store.iter()) {
            let group = crate::conditioning::param_group(&a.name).unwrap();
            if group == "audio" || group == "traj" {
                changed += usize::from(a.value != b.value);
            } else {
                assert_eq!(a.value, b.value, "{} changed", a.name);
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn windows_keep_conditions_aligned() {
        let s = &samples()[0];
        let w = s.window(1, 2, 2).unwrap();
        assert_eq!(w.tokens.stream(1), &s.tokens.stream(1)[1..3]);
        let traj = w.conditions.trajectory.as_ref().unwrap();
        assert_eq!(traj.rows(), 4);
        assert_eq!(traj.row(0), s.conditions.trajectory.as_ref().unwrap().row(2));
        assert!(s.window(3, 2, 2).is_err());
    }
}
