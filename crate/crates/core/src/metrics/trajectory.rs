use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Distance above which a frame counts as off-target, meters.
pub const TRAJECTORY_THRESHOLD_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    /// Percent of sequences with any frame beyond the threshold.
    pub traj_err_pct: f64,
    /// Percent of all frames beyond the threshold.
    pub loc_err_pct: f64,
    /// Mean root-position distance over all frames, centimeters.
    pub avg_err_cm: f64,
}

/// Root-trajectory control errors between generated and target root paths
/// (meters). Frames are pooled across sequences; a frame is off-target when
/// its distance exceeds `threshold`.
pub fn trajectory_errors<G, S>(generated: &[G], target: &[S], threshold: f64) -> Result<TrajectoryErrors>
where
    G: AsRef<[[f64; 3]]>,
    S: AsRef<[[f64; 3]]>,
{
    if generated.is_empty() || generated.len() != target.len() {
        return Err(invalid!(
            "trajectory errors need equal nonempty sets, got {} and {}",
            generated.len(),
            target.len()
        ));
    }
    let (mut frames, mut far_frames, mut far_seqs, mut total) = (0usize, 0usize, 0usize, 0.0);
    for (k, (g, t)) in generated.iter().zip(target).enumerate() {
        let (g, t) = (g.as_ref(), t.as_ref());
        if g.is_empty() || g.len() != t.len() {
            return Err(invalid!("sequence {k}: {} generated frames vs {} target frames", g.len(), t.len()));
        }
        let mut any = false;
        for (p, q) in g.iter().zip(t) {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if !d.is_finite() {
                return Err(invalid!("sequence {k} has non-finite root positions"));
            }
            total += d;
            if d > threshold {
                far_frames += 1;
                any = true;
            }
        }
        frames += g.len();
        far_seqs += any as usize;
    }
    Ok(TrajectoryErrors {
        traj_err_pct: 100.0 * far_seqs as f64 / generated.len() as f64,
        loc_err_pct: 100.0 * far_frames as f64 / frames as f64,
        avg_err_cm: 100.0 * total / frames as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_cases() {
        let target = vec![vec![[0.0, 0.0, 0.0]; 10]];
        let e = trajectory_errors(&target, &target, 0.5).unwrap();
        assert_eq!((e.traj_err_pct, e.loc_err_pct, e.avg_err_cm), (0.0, 0.0, 0.0));

        let shifted = vec![vec![[0.6, 0.0, 0.0]; 10]];
        let e = trajectory_errors(&shifted, &target, 0.5).unwrap();
        assert_eq!((e.traj_err_pct, e.loc_err_pct), (100.0, 100.0));
        assert!((e.avg_err_cm - 60.0).abs() < 1e-12);

        let mut one = vec![[0.0, 0.0, 0.0]; 10];
        one[4] = [0.0, 0.6, 0.0];
        let e = trajectory_errors(&[one], &target, 0.5).unwrap();
        assert_eq!((e.traj_err_pct, e.loc_err_pct), (100.0, 10.0));
        assert!((e.avg_err_cm - 6.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict_and_lengths_checked() {
        let target = vec![vec![[0.0; 3]; 2]];
        let at = vec![vec![[0.5, 0.0, 0.0]; 2]];
        assert_eq!(trajectory_errors(&at, &target, 0.5).unwrap().loc_err_pct, 0.0);
        assert!(trajectory_errors(&[vec![[0.0; 3]; 3]], &target, 0.5).is_err());
    }
}
