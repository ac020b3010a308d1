use serde::{Deserialize, Serialize};

use super::linalg::{clamped_roots, matmul, psd_sqrt, symmetric_eigen, symmetrize};
use crate::error::{invalid, Result};

/// Clamp tolerance for small negative eigenvalues in the FID square roots.
pub const FID_CLAMP_TOL: f64 = 1e-8;

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d * d {
            return Err(invalid!("gaussian summary: mean of {d} with {} covariance entries", cov.len()));
        }
        if mean.iter().chain(&cov).any(|x| !x.is_finite()) {
            return Err(invalid!("gaussian summary has non-finite entries"));
        }
        for i in 0..d {
            for j in i + 1..d {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > 1e-8 * (1.0 + a.abs().max(b.abs())) {
                    return Err(invalid!("covariance is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of at least two equal-width rows.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(invalid!("need at least two features for a covariance, got {n}"));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(invalid!("features have unequal widths"));
        }
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fréchet distance `‖μ₁−μ₂‖² + tr Σ₁ + tr Σ₂ − 2 tr (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}`.
///
/// The cross term goes through the symmetric product, whose eigenvalues
/// are those of `Σ₁Σ₂`.
pub fn fid(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(invalid!("fid: dimension mismatch {d} vs {}", b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let s1 = psd_sqrt(&a.cov, d, FID_CLAMP_TOL)?;
    let mut m = matmul(&matmul(&s1, &b.cov, d), &s1, d);
    symmetrize(&mut m, d);
    let (vals, _) = symmetric_eigen(&m, d)?;
    let cross: f64 = clamped_roots(&vals, FID_CLAMP_TOL)?.iter().sum();
    Ok((mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g1(mu: f64, var: f64) -> GaussianSummary {
        GaussianSummary::new(vec![mu], vec![var]).unwrap()
    }

    #[test]
    fn one_dimensional_examples() {
        assert!((fid(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((fid(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariances_match_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = 4;
            let (mut ca, mut cb) = (vec![0.0; d * d], vec![0.0; d * d]);
            let (mut ma, mut mb) = (vec![0.0f64; d], vec![0.0f64; d]);
            let mut expect = 0.0f64;
            for i in 0..d {
                let (sa, sb) = (rng.random_range(0.1..3.0f64), rng.random_range(0.1..3.0f64));
                ma[i] = rng.random_range(-2.0..2.0);
                mb[i] = rng.random_range(-2.0..2.0);
                ca[i * d + i] = sa * sa;
                cb[i * d + i] = sb * sb;
                expect += (ma[i] - mb[i]).powi(2) + (sa - sb).powi(2);
            }
            let a = GaussianSummary::new(ma, ca).unwrap();
            let b = GaussianSummary::new(mb, cb).unwrap();
            assert!((fid(&a, &b).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_matches_hand_computation() {
        let g = GaussianSummary::fit(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(g.mean, vec![2.0, 2.0]);
        // Deviations (-1,-2), (1,0), (0,2) over n-1 = 2.
        assert_eq!(g.cov, vec![1.0, 1.0, 1.0, 4.0]);
        assert!(GaussianSummary::fit(&[vec![1.0]]).is_err());
    }

    #[test]
    fn rejects_mismatch_and_asymmetry() {
        assert!(fid(&g1(0.0, 1.0), &GaussianSummary::new(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).is_err());
        assert!(GaussianSummary::new(vec![0.0; 2], vec![1.0, 0.5, 0.0, 1.0]).is_err());
    }
}
