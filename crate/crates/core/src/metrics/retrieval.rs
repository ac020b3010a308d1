use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Result};

/// Default number of random pairs for [`diversity`].
pub const DIVERSITY_PAIRS: usize = 300;
/// Candidate pool for [`r_precision`]: the true text plus 31 negatives.
pub const R_PRECISION_POOL: usize = 32;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_widths(sets: &[&[Vec<f64>]]) -> Result<usize> {
    let width = sets.iter().flat_map(|s| s.first()).map(|f| f.len()).next().unwrap_or(0);
    if sets.iter().any(|s| s.iter().any(|f| f.len() != width)) {
        return Err(invalid!("features have unequal widths"));
    }
    Ok(width)
}

/// Mean Euclidean distance over `pair_count` random pairs of two distinct
/// features.
pub fn diversity(features: &[Vec<f64>], pair_count: usize, rng: &mut impl Rng) -> Result<f64> {
    if features.len() < 2 {
        return Err(invalid!("diversity needs at least two features, got {}", features.len()));
    }
    if pair_count == 0 {
        return Err(invalid!("diversity needs at least one pair"));
    }
    check_widths(&[features])?;
    let total: f64 = (0..pair_count)
        .map(|_| {
            let idx = sample(rng, features.len(), 2);
            euclidean(&features[idx.index(0)], &features[idx.index(1)])
        })
        .sum();
    Ok(total / pair_count as f64)
}

/// Mean distance between each motion feature and its paired text feature.
pub fn mm_dist(motion: &[Vec<f64>], text: &[Vec<f64>]) -> Result<f64> {
    if motion.is_empty() || motion.len() != text.len() {
        return Err(invalid!("mm_dist needs equal nonempty sets, got {} and {}", motion.len(), text.len()));
    }
    check_widths(&[motion, text])?;
    Ok(motion.iter().zip(text).map(|(m, t)| euclidean(m, t)).sum::<f64>() / motion.len() as f64)
}

/// Top-k retrieval accuracy of each motion's own text among a pool of
/// `pool` candidates (the truth plus `pool − 1` negatives drawn from the
/// other pairs). Candidates at exactly the truth's distance rank behind it.
/// Returns one hit rate per entry of `ks`.
pub fn r_precision(
    motion: &[Vec<f64>],
    text: &[Vec<f64>],
    ks: &[usize],
    pool: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let n = motion.len();
    if n != text.len() {
        return Err(invalid!("r_precision: {n} motions but {} texts", text.len()));
    }
    if pool < 2 || n < pool {
        return Err(invalid!("r_precision needs at least {pool} pairs (pool {pool}), got {n}"));
    }
    if ks.iter().any(|&k| k == 0 || k > pool) {
        return Err(invalid!("r_precision: every k must lie in 1..={pool}"));
    }
    check_widths(&[motion, text])?;
    let mut hits = vec![0usize; ks.len()];
    for i in 0..n {
        let truth = euclidean(&motion[i], &text[i]);
        let rank = sample(rng, n - 1, pool - 1)
            .into_iter()
            .map(|j| if j >= i { j + 1 } else { j })
            .filter(|&j| euclidean(&motion[i], &text[j]) < truth)
            .count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn diversity_examples() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert_eq!(diversity(&same, 300, &mut rng()).unwrap(), 0.0);
        let two = vec![vec![0.0, 0.0], vec![7.0, 0.0]];
        assert_eq!(diversity(&two, 300, &mut rng()).unwrap(), 7.0);
        let f: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let f2: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect();
        let (a, b) = (diversity(&f, 50, &mut rng()).unwrap(), diversity(&f2, 50, &mut rng()).unwrap());
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn mm_dist_examples() {
        let m = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(mm_dist(&m, &m).unwrap(), 0.0);
        let t = vec![vec![3.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(mm_dist(&m, &t).unwrap(), 1.5);
        let (mr, tr): (Vec<_>, Vec<_>) = (m.iter().rev().cloned().collect(), t.iter().rev().cloned().collect());
        assert_eq!(mm_dist(&mr, &tr).unwrap(), 1.5);
    }

    #[test]
    fn identical_features_retrieve_perfectly() {
        let f: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 0.5]).collect();
        let r = r_precision(&f, &f, &[1, 2, 3], 32, &mut rng()).unwrap();
        assert_eq!(r, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ties_rank_behind_the_truth() {
        let m = vec![vec![0.0]; 32];
        let t = vec![vec![1.0]; 32];
        assert_eq!(r_precision(&m, &t, &[1], 32, &mut rng()).unwrap(), vec![1.0]);
    }

    #[test]
    fn rejects_small_sets_and_bad_k() {
        let f = vec![vec![0.0]; 31];
        assert!(r_precision(&f, &f, &[1], 32, &mut rng()).is_err());
        let f = vec![vec![0.0]; 32];
        assert!(r_precision(&f, &f, &[0], 32, &mut rng()).is_err());
        assert!(diversity(&f[..1], 1, &mut rng()).is_err());
    }
}
