use crate::error::{invalid, Result};
use crate::motion::MotionSequence;
use crate::Scalar;

/// Mean per-joint position error between global joints, in millimeters.
pub fn mpjpe<T: Scalar>(a: &MotionSequence<T>, b: &MotionSequence<T>) -> Result<f64> {
    if a.skeleton() != b.skeleton() {
        return Err(invalid!("skeleton mismatch"));
    }
    if a.frames() != b.frames() {
        return Err(invalid!("frame count mismatch: {} vs {}", a.frames(), b.frames()));
    }
    let (ga, gb) = (a.to_global_joints(), b.to_global_joints());
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, q) in ga.positions.iter().zip(&gb.positions) {
        let d: f64 = (0..3).map(|c| (p[c] - q[c]).as_f64().powi(2)).sum();
        total += d.sqrt();
        n += 1;
    }
    Ok(1000.0 * total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{Quat, SkeletonSpec};

    fn still(frames: usize, shift: impl Fn(usize, usize) -> [f64; 3]) -> MotionSequence<f64> {
        let sk = SkeletonSpec::shared_body22();
        let j = sk.joint_count();
        let local = (0..frames * j).map(|k| shift(k / j, k % j)).collect();
        MotionSequence::new(sk, 30.0, vec![[0.0; 3]; frames], vec![Quat::identity(); frames], local).unwrap()
    }

    #[test]
    fn examples() {
        let a = still(4, |_, _| [0.0; 3]);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        // Every joint offset by (3, 4, 0) mm.
        let b = still(4, |_, _| [0.003, 0.004, 0.0]);
        assert!((mpjpe(&a, &b).unwrap() - 5.0).abs() < 1e-9);
        let c = still(4, |f, _| if f < 2 { [0.01, 0.0, 0.0] } else { [0.0; 3] });
        assert!((mpjpe(&a, &c).unwrap() - 5.0).abs() < 1e-9);
        assert!(mpjpe(&a, &still(3, |_, _| [0.0; 3])).is_err());
    }
}
