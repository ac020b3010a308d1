use serde::{Deserialize, Serialize};

use super::DANCE_BAS;
use crate::error::{invalid, Result};
use crate::motion::MotionSequence;
use crate::Scalar;

/// Minimum prominence of a speed minimum, as a fraction of the speed range.
const PROMINENCE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatAlignment {
    pub bas: f64,
    pub dance: bool,
    /// Detected motion beats, seconds.
    pub motion_beats: Vec<f64>,
    /// Set when no motion beat was found; `bas` is then 0.
    pub no_motion_beats: bool,
}

/// Mean over audio beats of `exp(-d² / 2σ²)`, `d` being the distance to the
/// nearest motion beat. Times and `sigma` in seconds.
pub fn bas_from_beats(audio: &[f64], motion: &[f64], sigma: f64) -> Result<f64> {
    if audio.is_empty() {
        return Err(invalid!("beat alignment needs at least one audio beat"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid!("beat alignment sigma must be positive, got {sigma}"));
    }
    if motion.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = audio
        .iter()
        .map(|&b| {
            let d2 = motion.iter().map(|&m| (b - m) * (b - m)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / audio.len() as f64)
}

/// Frame times (seconds) of local minima of the mean global-joint speed whose
/// prominence reaches 10% of the speed range.
///
/// Speed at frame `i` is the central difference `|p_{i+1} - p_{i-1}| / 2`
/// averaged over joints, for `1 <= i < T - 1`.
pub fn motion_beats<T: Scalar>(m: &MotionSequence<T>) -> Vec<f64> {
    let frames = m.frames();
    if frames < 3 {
        return Vec::new();
    }
    let g = m.to_global_joints();
    let j = g.joint_count;
    let speed: Vec<f64> = (1..frames - 1)
        .map(|i| {
            let mut s = 0.0;
            for k in 0..j {
                let (a, b) = (g.positions[(i + 1) * j + k], g.positions[(i - 1) * j + k]);
                let d: f64 = (0..3).map(|c| (a[c] - b[c]).as_f64().powi(2)).sum();
                s += d.sqrt() / 2.0;
            }
            s / j as f64
        })
        .collect();
    let (lo, hi) = speed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Vec::new();
    }
    let min_prominence = PROMINENCE_FRACTION * range;
    let n = speed.len();
    let fps = m.fps().as_f64();
    let mut out = Vec::new();
    for i in 0..n {
        let left_lower = i == 0 || speed[i - 1] > speed[i];
        let right_lower = i + 1 == n || speed[i + 1] >= speed[i];
        if !(left_lower && right_lower) || i == 0 || i + 1 == n {
            continue;
        }
        // Highest point between this minimum and the nearest lower value
        // (or the sequence edge) on each side.
        let climb = |range: &mut dyn Iterator<Item = usize>| {
            let mut peak = speed[i];
            for k in range {
                if speed[k] < speed[i] {
                    break;
                }
                peak = peak.max(speed[k]);
            }
            peak
        };
        let left = climb(&mut (0..i).rev());
        let right = climb(&mut (i + 1..n));
        if left.min(right) - speed[i] >= min_prominence {
            out.push((i + 1) as f64 / fps);
        }
    }
    out
}

/// Beat alignment of a motion against audio beats (seconds); `sigma_frames`
/// is converted to seconds with the motion's frame rate. Dance iff the score
/// exceeds 0.15.
pub fn beat_alignment<T: Scalar>(m: &MotionSequence<T>, audio_beats: &[f64], sigma_frames: f64) -> Result<BeatAlignment> {
    let beats = motion_beats(m);
    let sigma = sigma_frames / m.fps().as_f64();
    let bas = bas_from_beats(audio_beats, &beats, sigma)?;
    Ok(BeatAlignment {
        bas,
        dance: bas > DANCE_BAS,
        no_motion_beats: beats.is_empty(),
        motion_beats: beats,
    })
}
