use super::{
    CurationRecord, FilterKind, FilterVerdict, Luminance, Threshold, LUMINANCE_RANGE, MAX_JERK, MAX_JUMP_MM,
    MAX_ROOT_MUTATION_DEG, MIN_BLUR_SCORE, MIN_FRAMES, MIN_KEYPOINT_CONFIDENCE, MIN_NORMALIZED_BITRATE,
    MOTION_SCORE_RANGE,
};
use crate::error::{invalid, Result};
use crate::motion::MotionSequence;
use crate::Scalar;

/// `B / sqrt(W · H)`; fails below 500.
pub fn filter_bitrate(rec: &CurationRecord) -> Result<FilterVerdict> {
    let s = &rec.scalars;
    let (Some(w), Some(h), Some(b)) = (s.width, s.height, s.bitrate) else {
        return Err(invalid!("record {}: bitrate filter needs width, height and bitrate", rec.id));
    };
    if w == 0 || h == 0 {
        return Err(invalid!("record {}: frame dimensions must be positive", rec.id));
    }
    let stat = b / ((w as f64) * (h as f64)).sqrt();
    Ok(FilterVerdict::new(FilterKind::Bitrate, stat, Threshold::AtLeast(MIN_NORMALIZED_BITRATE)))
}

/// `0.2126 R + 0.7152 G + 0.0722 B`, rearranged as
/// `G + 0.2126 (R - G) + 0.0722 (B - G)` so gray inputs map to themselves
/// exactly.
pub fn luminance_of(l: Luminance) -> f64 {
    match l {
        Luminance::Mean(x) => x,
        Luminance::Rgb([r, g, b]) => g + 0.2126 * (r - g) + 0.0722 * (b - g),
    }
}

/// Fails outside the closed interval `[10, 210]`.
pub fn filter_luminance(rec: &CurationRecord) -> Result<FilterVerdict> {
    let l = rec
        .scalars
        .luminance
        .ok_or_else(|| invalid!("record {}: luminance filter needs a luminance", rec.id))?;
    let [a, b] = LUMINANCE_RANGE;
    Ok(FilterVerdict::new(FilterKind::Luminance, luminance_of(l), Threshold::Within(a, b)))
}

/// Fails outside the closed interval `[3.5, 350]`.
pub fn filter_motion_score(rec: &CurationRecord) -> Result<FilterVerdict> {
    let m = rec
        .scalars
        .motion_score
        .ok_or_else(|| invalid!("record {}: motion-score filter needs a motion score", rec.id))?;
    let [a, b] = MOTION_SCORE_RANGE;
    Ok(FilterVerdict::new(FilterKind::MotionScore, m, Threshold::Within(a, b)))
}

/// Duration (frames), blur and keypoint confidence checks, in that order.
pub fn filter_2d_quality(rec: &CurationRecord) -> Result<[FilterVerdict; 3]> {
    let frames = rec.motion()?.frames();
    let s = &rec.scalars;
    let (Some(blur), Some(conf)) = (s.blur, s.confidence) else {
        return Err(invalid!("record {}: 2D quality filter needs blur and confidence", rec.id));
    };
    Ok([
        FilterVerdict::new(FilterKind::Duration, frames as f64, Threshold::AtLeast(MIN_FRAMES as f64)),
        FilterVerdict::new(FilterKind::Blur, blur, Threshold::AtLeast(MIN_BLUR_SCORE)),
        FilterVerdict::new(FilterKind::Confidence, conf, Threshold::AtLeast(MIN_KEYPOINT_CONFIDENCE)),
    ])
}

/// Largest rotation between consecutive root orientations, degrees:
/// `Δθ_i = arccos((tr(R_i R_{i-1}ᵀ) - 1) / 2)` with the argument clamped to
/// `[-1, 1]`. Fails above 30°.
pub fn root_mutation_score<T: Scalar>(m: &MotionSequence<T>) -> Result<FilterVerdict> {
    if m.frames() < 2 {
        return Err(invalid!("root mutation needs at least 2 frames, got {}", m.frames()));
    }
    let mats: Vec<[[f64; 3]; 3]> = m
        .root_rotation()
        .iter()
        .map(|q| q.to_matrix().map(|r| r.map(|x| x.as_f64())))
        .collect();
    let mut worst = 0.0f64;
    for w in mats.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        // tr(A Bᵀ) is the elementwise product sum.
        let mut tr = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                tr += cur[r][c] * prev[r][c];
            }
        }
        let arg = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
        worst = worst.max(arg.acos().to_degrees());
    }
    Ok(FilterVerdict::new(FilterKind::RootMutation, worst, Threshold::AtMost(MAX_ROOT_MUTATION_DEG)))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn global_f64<T: Scalar>(m: &MotionSequence<T>) -> (usize, Vec<[f64; 3]>) {
    let g = m.to_global_joints();
    (g.joint_count, g.positions.iter().map(|p| p.map(|x| x.as_f64())).collect())
}

/// Mean third-difference norm over every joint and all `T - 3` frames where
/// `p_{i+1} - 3p_i + 3p_{i-1} - p_{i-2}` is defined, in meters per frame³.
/// Fails above 0.015.
pub fn jerk_score<T: Scalar>(m: &MotionSequence<T>) -> Result<FilterVerdict> {
    let frames = m.frames();
    if frames < 4 {
        return Err(invalid!("jerk needs at least 4 frames, got {frames}"));
    }
    let (j, p) = global_f64(m);
    let mut sum = 0.0;
    for i in 2..frames - 1 {
        for k in 0..j {
            let at = |f: usize| p[f * j + k];
            let (a, b, c, d) = (at(i + 1), at(i), at(i - 1), at(i - 2));
            let v = [0, 1, 2].map(|x| a[x] - 3.0 * b[x] + 3.0 * c[x] - d[x]);
            sum += (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        }
    }
    let stat = sum / ((frames - 3) * j) as f64;
    Ok(FilterVerdict::new(FilterKind::Jerk, stat, Threshold::AtMost(MAX_JERK)))
}

/// Largest frame-to-frame displacement of any joint, millimeters. Fails above
/// 200 mm.
pub fn jump_score<T: Scalar>(m: &MotionSequence<T>) -> Result<FilterVerdict> {
    let frames = m.frames();
    if frames < 2 {
        return Err(invalid!("jump needs at least 2 frames, got {frames}"));
    }
    let (j, p) = global_f64(m);
    let mut worst = 0.0f64;
    for i in 1..frames {
        for k in 0..j {
            worst = worst.max(dist(p[i * j + k], p[(i - 1) * j + k]));
        }
    }
    Ok(FilterVerdict::new(FilterKind::Jump, worst * 1000.0, Threshold::AtMost(MAX_JUMP_MM)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::QualityScalars;
    use crate::motion::{Quat, SkeletonSpec};
    use std::sync::Arc;

    fn two_joint() -> Arc<SkeletonSpec> {
        Arc::new(SkeletonSpec::new(vec!["root".into(), "tip".into()], vec![None, Some(0)]).unwrap())
    }

    /// Root follows `path`; both joints sit at the root.
    fn path_motion(path: &[[f64; 3]]) -> MotionSequence<f64> {
        MotionSequence::new(
            two_joint(),
            30.0,
            path.to_vec(),
            vec![Quat::identity(); path.len()],
            vec![[0.0; 3]; path.len() * 2],
        )
        .unwrap()
    }

    fn yaw_motion(yaws_deg: &[f64]) -> MotionSequence<f64> {
        let n = yaws_deg.len();
        MotionSequence::new(
            two_joint(),
            30.0,
            vec![[0.0; 3]; n],
            yaws_deg.iter().map(|d| Quat::from_yaw(d.to_radians())).collect(),
            vec![[0.0; 3]; n * 2],
        )
        .unwrap()
    }

    fn scalars(f: impl FnOnce(&mut QualityScalars)) -> CurationRecord {
        let mut s = QualityScalars::default();
        f(&mut s);
        CurationRecord::new("r").with_scalars(s)
    }

    #[test]
    fn bitrate_boundaries() {
        let v = filter_bitrate(&scalars(|s| {
            s.width = Some(1);
            s.height = Some(1);
            s.bitrate = Some(500.0);
        }))
        .unwrap();
        assert_eq!((v.statistic, v.passed), (500.0, true));
        let v = filter_bitrate(&scalars(|s| {
            s.width = Some(1);
            s.height = Some(1);
            s.bitrate = Some(499.0);
        }))
        .unwrap();
        assert!(!v.passed);
        let v = filter_bitrate(&scalars(|s| {
            s.width = Some(1920);
            s.height = Some(1080);
            s.bitrate = Some(720_000.0);
        }))
        .unwrap();
        assert!((v.statistic - 500.0).abs() < 1e-9 && v.passed);
        assert!(filter_bitrate(&scalars(|_| {})).is_err());
    }

    #[test]
    fn luminance_boundaries() {
        let lum = |rgb: [f64; 3]| filter_luminance(&scalars(|s| s.luminance = Some(Luminance::Rgb(rgb)))).unwrap();
        let white = lum([255.0; 3]);
        assert_eq!((white.statistic, white.passed), (255.0, false));
        assert!(lum([128.0; 3]).passed);
        let low = lum([10.0; 3]);
        assert_eq!((low.statistic, low.passed), (10.0, true));
        let high = lum([210.0; 3]);
        assert_eq!((high.statistic, high.passed), (210.0, true));
        assert!(!lum([9.0; 3]).passed);
        assert!((luminance_of(Luminance::Rgb([100.0, 0.0, 0.0])) - 21.26).abs() < 1e-12);
    }

    #[test]
    fn motion_score_boundaries() {
        let ms = |x: f64| filter_motion_score(&scalars(|s| s.motion_score = Some(x))).unwrap().passed;
        assert!(ms(3.5));
        assert!(ms(350.0));
        assert!(!ms(0.0));
        assert!(!ms(400.0));
    }

    #[test]
    fn two_d_quality_boundaries() {
        let rec = |frames: usize, blur: f64, conf: f64| {
            let mut r = scalars(|s| {
                s.blur = Some(blur);
                s.confidence = Some(conf);
            });
            r.motion = Some(path_motion(&vec![[0.0; 3]; frames]));
            filter_2d_quality(&r).unwrap()
        };
        assert!(!rec(59, 0.5, 0.9)[0].passed);
        assert!(rec(60, 0.1, 0.6).iter().all(|v| v.passed));
        assert!(!rec(60, 0.5, 0.59)[2].passed);
        assert!(!rec(60, 0.09, 0.9)[1].passed);
    }

    #[test]
    fn root_mutation_examples() {
        let v = root_mutation_score(&yaw_motion(&[20.0, 20.0, 20.0])).unwrap();
        assert_eq!((v.statistic, v.passed), (0.0, true));
        let v = root_mutation_score(&yaw_motion(&[0.0, 45.0])).unwrap();
        assert!((v.statistic - 45.0).abs() < 1e-9 && !v.passed);
        let v = root_mutation_score(&yaw_motion(&[0.0, 90.0])).unwrap();
        assert!((v.statistic - 90.0).abs() < 1e-9 && !v.passed);
        let v = root_mutation_score(&yaw_motion(&[0.0, 30.0])).unwrap();
        assert!((v.statistic - 30.0).abs() < 1e-9 && v.passed, "{}", v.statistic);
        assert!(root_mutation_score(&yaw_motion(&[0.0])).is_err());
    }

    #[test]
    fn jerk_examples() {
        let line: Vec<_> = (0..10).map(|t| [t as f64, 0.0, 0.0]).collect();
        assert_eq!(jerk_score(&path_motion(&line)).unwrap().statistic, 0.0);
        let quad: Vec<_> = (0..10).map(|t| [(t * t) as f64, 0.0, 0.0]).collect();
        assert_eq!(jerk_score(&path_motion(&quad)).unwrap().statistic, 0.0);
        let cubic: Vec<_> = (0..10).map(|t| [(t * t * t) as f64, 0.0, 0.0]).collect();
        let v = jerk_score(&path_motion(&cubic)).unwrap();
        assert_eq!((v.statistic, v.passed), (6.0, false));
        assert!(jerk_score(&path_motion(&line[..3])).is_err());
    }

    #[test]
    fn jump_examples() {
        let still = path_motion(&[[0.0; 3]; 4]);
        assert_eq!(jump_score(&still).unwrap().statistic, 0.0);
        let big = path_motion(&[[0.0; 3], [0.25, 0.0, 0.0]]);
        let v = jump_score(&big).unwrap();
        assert_eq!((v.statistic, v.passed), (250.0, false));
        let edge = path_motion(&[[0.0; 3], [0.2, 0.0, 0.0]]);
        let v = jump_score(&edge).unwrap();
        assert_eq!((v.statistic, v.passed), (200.0, true));
    }
}
