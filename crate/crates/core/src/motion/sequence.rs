use std::ops::Range;
use std::sync::Arc;

use super::quat::Quat;
use super::skeleton::SkeletonSpec;
use crate::error::{invalid, Result};
use crate::Scalar;

/// Tolerance on quaternion norms accepted by [`MotionSequence::new`].
pub const UNIT_QUAT_TOL: f64 = 1e-6;

/// A motion clip: per-frame root transform plus joint positions expressed in
/// the root frame.
///
/// The per-frame feature vector (see [`MotionSequence::features`]) is
/// `[local joints (3J) | root translation (3) | root quaternion w,x,y,z (4)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<T> {
    skeleton: Arc<SkeletonSpec>,
    fps: T,
    root_translation: Vec<[T; 3]>,
    root_rotation: Vec<Quat<T>>,
    local_joints: Vec<[T; 3]>,
}

/// World-space joint positions, `T × J`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalJoints<T> {
    pub joint_count: usize,
    pub positions: Vec<[T; 3]>,
}

impl<T: Scalar> GlobalJoints<T> {
    pub fn frames(&self) -> usize {
        if self.joint_count == 0 {
            0
        } else {
            self.positions.len() / self.joint_count
        }
    }

    pub fn frame(&self, t: usize) -> &[[T; 3]] {
        &self.positions[t * self.joint_count..(t + 1) * self.joint_count]
    }

    pub fn slice(&self, range: Range<usize>) -> Self {
        let j = self.joint_count;
        Self {
            joint_count: j,
            positions: self.positions[range.start * j..range.end * j].to_vec(),
        }
    }
}

impl<T: Scalar> MotionSequence<T> {
    pub fn new(
        skeleton: Arc<SkeletonSpec>,
        fps: T,
        root_translation: Vec<[T; 3]>,
        root_rotation: Vec<Quat<T>>,
        local_joints: Vec<[T; 3]>,
    ) -> Result<Self> {
        let frames = root_translation.len();
        if frames == 0 {
            return Err(invalid!("motion must have at least one frame"));
        }
        if !(fps > T::zero()) || !fps.is_finite() {
            return Err(invalid!("fps must be positive and finite, got {fps}"));
        }
        if root_rotation.len() != frames {
            return Err(invalid!(
                "{} root rotations for {frames} frames",
                root_rotation.len()
            ));
        }
        let j = skeleton.joint_count();
        if local_joints.len() != frames * j {
            return Err(invalid!(
                "{} local joint positions, expected {frames}×{j}",
                local_joints.len()
            ));
        }
        let all_finite = |v: &[[T; 3]]| v.iter().flatten().all(|x| x.is_finite());
        if !all_finite(&root_translation) || !all_finite(&local_joints) {
            return Err(invalid!("motion contains non-finite values"));
        }
        for (t, q) in root_rotation.iter().enumerate() {
            if !q.is_finite() {
                return Err(invalid!("frame {t}: non-finite root rotation"));
            }
            let dev = (q.norm() - T::one()).abs().as_f64();
            if dev > UNIT_QUAT_TOL {
                return Err(invalid!(
                    "frame {t}: root rotation is not unit-norm (|q| - 1 = {dev:e})"
                ));
            }
        }
        Ok(Self {
            skeleton,
            fps,
            root_translation,
            root_rotation,
            local_joints,
        })
    }

    /// Rebuilds a motion from a `T × D` feature matrix. Quaternions are
    /// renormalized, so decoder output is always accepted if finite.
    pub fn from_features(skeleton: Arc<SkeletonSpec>, fps: T, features: &[T]) -> Result<Self> {
        let j = skeleton.joint_count();
        let d = skeleton.feature_width();
        if features.is_empty() || features.len() % d != 0 {
            return Err(invalid!(
                "feature buffer of length {} is not a positive multiple of width {d}",
                features.len()
            ));
        }
        let frames = features.len() / d;
        let mut root_translation = Vec::with_capacity(frames);
        let mut root_rotation = Vec::with_capacity(frames);
        let mut local_joints = Vec::with_capacity(frames * j);
        for row in features.chunks_exact(d) {
            for k in 0..j {
                local_joints.push([row[3 * k], row[3 * k + 1], row[3 * k + 2]]);
            }
            let o = 3 * j;
            root_translation.push([row[o], row[o + 1], row[o + 2]]);
            root_rotation
                .push(Quat::new(row[o + 3], row[o + 4], row[o + 5], row[o + 6]).normalized());
        }
        Self::new(skeleton, fps, root_translation, root_rotation, local_joints)
    }

    pub fn skeleton(&self) -> &Arc<SkeletonSpec> {
        &self.skeleton
    }

    pub fn fps(&self) -> T {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.root_translation.len()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn feature_width(&self) -> usize {
        self.skeleton.feature_width()
    }

    pub fn root_translation(&self) -> &[[T; 3]] {
        &self.root_translation
    }

    pub fn root_rotation(&self) -> &[Quat<T>] {
        &self.root_rotation
    }

    pub fn local_joints(&self) -> &[[T; 3]] {
        &self.local_joints
    }

    pub fn local_frame(&self, t: usize) -> &[[T; 3]] {
        let j = self.joint_count();
        &self.local_joints[t * j..(t + 1) * j]
    }

    /// Row-major `T × D` feature matrix.
    pub fn features(&self) -> Vec<T> {
        let d = self.feature_width();
        let mut out = Vec::with_capacity(self.frames() * d);
        for t in 0..self.frames() {
            for p in self.local_frame(t) {
                out.extend_from_slice(p);
            }
            out.extend_from_slice(&self.root_translation[t]);
            out.extend_from_slice(&self.root_rotation[t].to_array());
        }
        out
    }

    /// World coordinates: `rotate(q_t, local) + translation_t` per joint.
    pub fn to_global_joints(&self) -> GlobalJoints<T> {
        let j = self.joint_count();
        let mut positions = Vec::with_capacity(self.local_joints.len());
        for t in 0..self.frames() {
            let q = &self.root_rotation[t];
            let tr = self.root_translation[t];
            for p in self.local_frame(t) {
                let r = q.rotate(*p);
                positions.push([r[0] + tr[0], r[1] + tr[1], r[2] + tr[2]]);
            }
        }
        GlobalJoints {
            joint_count: j,
            positions,
        }
    }

    /// Frames `range.start..range.end`.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frames() {
            return Err(invalid!(
                "slice {}..{} outside motion of {} frames",
                range.start,
                range.end,
                self.frames()
            ));
        }
        let j = self.joint_count();
        Ok(Self {
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            root_translation: self.root_translation[range.clone()].to_vec(),
            root_rotation: self.root_rotation[range.clone()].to_vec(),
            local_joints: self.local_joints[range.start * j..range.end * j].to_vec(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> MotionSequence<U> {
        let c3 = |p: &[T; 3]| [U::lit(p[0].as_f64()), U::lit(p[1].as_f64()), U::lit(p[2].as_f64())];
        MotionSequence {
            skeleton: self.skeleton.clone(),
            fps: U::lit(self.fps.as_f64()),
            root_translation: self.root_translation.iter().map(c3).collect(),
            root_rotation: self
                .root_rotation
                .iter()
                .map(|q| {
                    Quat::new(
                        U::lit(q.w.as_f64()),
                        U::lit(q.x.as_f64()),
                        U::lit(q.y.as_f64()),
                        U::lit(q.z.as_f64()),
                    )
                })
                .collect(),
            local_joints: self.local_joints.iter().map(c3).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(frames: usize, translation: [f64; 3], q: Quat<f64>) -> MotionSequence<f64> {
        let sk = SkeletonSpec::shared_body22();
        let j = sk.joint_count();
        let local: Vec<[f64; 3]> = (0..frames * j)
            .map(|i| [i as f64 * 0.01, -(i as f64) * 0.02, 0.5])
            .collect();
        MotionSequence::new(sk, 30.0, vec![translation; frames], vec![q; frames], local).unwrap()
    }

    #[test]
    fn identity_transform_keeps_local_positions() {
        let m = still(3, [0.0; 3], Quat::identity());
        assert_eq!(m.to_global_joints().positions, m.local_joints().to_vec());
    }

    #[test]
    fn translation_shifts_every_joint() {
        let m = still(2, [1.0, 0.0, 0.0], Quat::identity());
        let g = m.to_global_joints();
        for (p, l) in g.positions.iter().zip(m.local_joints()) {
            assert_eq!(*p, [l[0] + 1.0, l[1], l[2]]);
        }
    }

    #[test]
    fn quarter_yaw_rotates_local_x_onto_y() {
        let sk = Arc::new(
            SkeletonSpec::new(vec!["root".into(), "tip".into()], vec![None, Some(0)]).unwrap(),
        );
        let q = Quat::from_yaw(std::f64::consts::FRAC_PI_2);
        let m = MotionSequence::new(
            sk,
            30.0,
            vec![[2.0, 3.0, 0.0]],
            vec![q],
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let g = m.to_global_joints();
        let tip = g.positions[1];
        assert!((tip[0] - 2.0).abs() < 1e-12);
        assert!((tip[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion_and_empty() {
        let sk = SkeletonSpec::shared_body22();
        let local = vec![[0.0; 3]; 22];
        let bad = Quat::new(1.1, 0.0, 0.0, 0.0);
        assert!(MotionSequence::new(sk.clone(), 30.0, vec![[0.0; 3]], vec![bad], local).is_err());
        assert!(MotionSequence::<f64>::new(sk, 30.0, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn feature_round_trip() {
        let m = still(4, [0.5, -1.0, 0.9], Quat::from_yaw(0.3));
        let f = m.features();
        assert_eq!(f.len(), 4 * 73);
        let back = MotionSequence::from_features(m.skeleton().clone(), 30.0, &f).unwrap();
        assert_eq!(back.local_joints(), m.local_joints());
        assert_eq!(back.root_translation(), m.root_translation());
    }

    #[test]
    fn global_joints_commute_with_slicing() {
        let sk = SkeletonSpec::shared_body22();
        let frames = 10;
        let rot: Vec<_> = (0..frames).map(|t| Quat::from_yaw(t as f64 * 0.2)).collect();
        let tr: Vec<_> = (0..frames).map(|t| [t as f64, 0.1 * t as f64, 0.9]).collect();
        let local: Vec<_> = (0..frames * 22).map(|i| [(i % 7) as f64 * 0.1, 0.2, 0.0]).collect();
        let m = MotionSequence::new(sk, 30.0, tr, rot, local).unwrap();
        let whole = m.to_global_joints();
        assert_eq!(m.slice(3..7).unwrap().to_global_joints(), whole.slice(3..7));
    }
}
