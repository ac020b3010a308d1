use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{remaining_masked, DecodeConfig, Generator, Layout, Strategy};
use crate::conditioning::ConditionSet;
use crate::error::{invalid, Result};
use crate::nn::Graph;
use crate::rfsq::TokenGrid;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeStats {
    /// Full forward passes through the backbone.
    pub backbone_passes: usize,
}

/// Temperatures at or below this decode greedily.
const GREEDY_TEMPERATURE: f64 = 1e-6;

/// Draws a code from one logit row. Returns the code and its untempered
/// probability.
fn pick<T: Scalar>(row: &[T], temperature: f64, rng: &mut impl Rng) -> (u32, f64) {
    let p = Generator::<T>::softmax_row(row, 1.0);
    let code = if temperature <= GREEDY_TEMPERATURE {
        // First maximum wins.
        let mut best = 0;
        for (i, &x) in p.iter().enumerate() {
            if x > p[best] {
                best = i;
            }
        }
        best
    } else {
        let q = Generator::<T>::softmax_row(row, temperature);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = q.len() - 1;
        for (i, &x) in q.iter().enumerate() {
            acc += x;
            if u < acc {
                chosen = i;
                break;
            }
        }
        chosen
    };
    (code as u32, p[code])
}

/// Highest confidence first, then lowest position.
fn by_confidence(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Generates a `streams × length` token grid under `conditions`.
///
/// - `mask_parallel`: starts fully masked; each of the `S` passes predicts
///   every stream at every masked timestep and commits the most confident
///   timesteps so that `floor(t · cos(π/2 · s/S))` stay masked after pass
///   `s`. A timestep's confidence is the product of its streams' committed
///   code probabilities.
/// - `mask_flatten`: the same schedule over the `streams · length` token line.
/// - `ar_flatten`: one causal pass per token along the stream-major line.
pub fn generate<T: Scalar>(
    model: &Generator<T>,
    conditions: &ConditionSet<T>,
    length: usize,
    cfg: &DecodeConfig,
    rng: &mut impl Rng,
) -> Result<(TokenGrid, DecodeStats)> {
    let mc = model.config();
    if length == 0 || length > mc.max_len {
        return Err(invalid!("cannot generate {length} tokens; the model supports 1..={}", mc.max_len));
    }
    cfg.validate()?;
    let (streams, mask_id) = (mc.streams, mc.mask_id());
    let mut grid = TokenGrid::filled(streams, length, mask_id);
    let mut stats = DecodeStats::default();
    match cfg.strategy {
        Strategy::MaskParallel => {
            let mut masked = vec![true; length];
            for s in 0..cfg.iterations {
                let mut g = Graph::new(&model.store);
                let logits = model.stream_logits(&mut g, conditions, &grid, Layout::Parallel)?;
                stats.backbone_passes += 1;
                let mut cand = Vec::new();
                let mut codes = vec![0u32; streams * length];
                for tau in (0..length).filter(|&i| masked[i]) {
                    let mut conf = 0.0;
                    for (v, &z) in logits.iter().enumerate() {
                        let (code, p) = pick(g.value(z).row(tau), cfg.temperature, rng);
                        codes[v * length + tau] = code;
                        conf += p.ln();
                    }
                    cand.push((tau, conf));
                }
                let keep = remaining_masked(length, s + 1, cfg.iterations);
                let commit = cand.len().saturating_sub(keep);
                cand.sort_by(by_confidence);
                for &(tau, _) in &cand[..commit] {
                    for v in 0..streams {
                        grid.set(v, tau, codes[v * length + tau]);
                    }
                    masked[tau] = false;
                }
            }
        }
        Strategy::MaskFlatten => {
            let n = streams * length;
            let mut masked = vec![true; n];
            for s in 0..cfg.iterations {
                let mut g = Graph::new(&model.store);
                let logits = model.stream_logits(&mut g, conditions, &grid, Layout::Flatten)?;
                stats.backbone_passes += 1;
                let mut cand = Vec::new();
                let mut codes = vec![0u32; n];
                for p in (0..n).filter(|&i| masked[i]) {
                    let (v, tau) = (p / length, p % length);
                    let (code, prob) = pick(g.value(logits[v]).row(tau), cfg.temperature, rng);
                    codes[p] = code;
                    cand.push((p, prob.ln()));
                }
                let keep = remaining_masked(n, s + 1, cfg.iterations);
                let commit = cand.len().saturating_sub(keep);
                cand.sort_by(by_confidence);
                for &(p, _) in &cand[..commit] {
                    grid.set(p / length, p % length, codes[p]);
                    masked[p] = false;
                }
            }
        }
        Strategy::ArFlatten => {
            for p in 0..streams * length {
                let (v, tau) = (p / length, p % length);
                let mut g = Graph::new(&model.store);
                let h = model.hidden(&mut g, conditions, &grid, Layout::Autoregressive, Some(p + 1))?;
                stats.backbone_passes += 1;
                let row = g.slice_rows(h, p, 1)?;
                let z = model.head_logits(&mut g, row, v)?;
                let (code, _) = pick(g.value(z).row(0), cfg.temperature, rng);
                grid.set(v, tau, code);
            }
        }
    }
    debug_assert!(!grid.codes().contains(&mask_id));
    Ok((grid, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::model::tests::tiny;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conds() -> ConditionSet<f64> {
        ConditionSet {
            text: Some(Tensor::matrix(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap()),
            audio: None,
            trajectory: Some(Tensor::full(vec![10, 3], 0.2)),
        }
    }

    #[test]
    fn pass_counts_and_mask_free_output() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (strategy, expect) in [
            (Strategy::MaskParallel, 4),
            (Strategy::MaskFlatten, 4),
            (Strategy::ArFlatten, 15),
        ] {
            for temperature in [0.0, 1.0] {
                let cfg = DecodeConfig {
                    strategy,
                    iterations: 4,
                    temperature,
                    ..DecodeConfig::default()
                };
                let (grid, stats) = generate(&model, &conds(), 5, &cfg, &mut rng).unwrap();
                assert_eq!(stats.backbone_passes, expect, "{strategy}");
                grid.check_range(12).unwrap();
            }
        }
    }

    #[test]
    fn more_iterations_than_timesteps_still_counts_every_pass() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let cfg = DecodeConfig {
            iterations: 9,
            ..DecodeConfig::default()
        };
        let (grid, stats) = generate(&model, &conds(), 3, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(stats.backbone_passes, 9);
        grid.check_range(12).unwrap();
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let model = Generator::<f64>::new(tiny(), 4).unwrap();
        let cfg = DecodeConfig::default();
        let a = generate(&model, &conds(), 6, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate(&model, &conds(), 6, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_lengths() {
        let model = Generator::<f64>::new(tiny(), 0).unwrap();
        let cfg = DecodeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate(&model, &conds(), 0, &cfg, &mut rng).is_err());
        assert!(generate(&model, &conds(), 9, &cfg, &mut rng).is_err());
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        let mut c = vec![(3, -1.0), (1, -1.0), (2, -0.5)];
        c.sort_by(by_confidence);
        assert_eq!(c.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 1, 3]);
    }
}
