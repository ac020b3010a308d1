use std::sync::Arc;

use crate::error::{invalid, Result};

/// Joint names of the default 22-joint body skeleton.
pub const BODY22_NAMES: [&str; 22] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

const BODY22_PARENTS: [Option<usize>; 22] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

/// Rest pose of the body skeleton in the root frame (x forward, y left, z up), meters.
pub const BODY22_REST: [[f64; 3]; 22] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.09, -0.05],
    [0.0, -0.09, -0.05],
    [0.0, 0.0, 0.11],
    [0.0, 0.10, -0.45],
    [0.0, -0.10, -0.45],
    [0.0, 0.0, 0.24],
    [0.0, 0.10, -0.85],
    [0.0, -0.10, -0.85],
    [0.0, 0.0, 0.30],
    [0.12, 0.10, -0.90],
    [0.12, -0.10, -0.90],
    [0.0, 0.0, 0.52],
    [0.0, 0.08, 0.45],
    [0.0, -0.08, 0.45],
    [0.02, 0.0, 0.62],
    [0.0, 0.18, 0.45],
    [0.0, -0.18, 0.45],
    [0.0, 0.20, 0.20],
    [0.0, -0.20, 0.20],
    [0.0, 0.20, -0.05],
    [0.0, -0.20, -0.05],
];

/// Joint hierarchy. Parent indices form a tree rooted at joint 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonSpec {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
}

impl SkeletonSpec {
    pub fn new(joint_names: Vec<String>, parents: Vec<Option<usize>>) -> Result<Self> {
        if joint_names.len() < 2 {
            return Err(invalid!("skeleton needs at least 2 joints, got {}", joint_names.len()));
        }
        if joint_names.len() != parents.len() {
            return Err(invalid!(
                "{} joint names but {} parent entries",
                joint_names.len(),
                parents.len()
            ));
        }
        if parents[0].is_some() {
            return Err(invalid!("joint 0 must be the root"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                // Parents preceding children rules out cycles.
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(invalid!("joint {j} has parent {p}; parents must precede children"))
                }
                None => return Err(invalid!("joint {j} has no parent; only joint 0 may be a root")),
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &joint_names {
            if name.is_empty() || name.contains(char::is_whitespace) || name.contains(':') {
                return Err(invalid!("invalid joint name {name:?}"));
            }
            if !seen.insert(name) {
                return Err(invalid!("duplicate joint name {name:?}"));
            }
        }
        Ok(Self {
            joint_names,
            parents,
        })
    }

    /// The default 22-joint body skeleton.
    pub fn body22() -> Self {
        Self::new(
            BODY22_NAMES.iter().map(|s| s.to_string()).collect(),
            BODY22_PARENTS.to_vec(),
        )
        .expect("built-in skeleton is valid")
    }

    pub fn shared_body22() -> Arc<Self> {
        Arc::new(Self::body22())
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Width of the per-frame feature vector: local joints, root translation,
    /// root rotation quaternion.
    pub fn feature_width(&self) -> usize {
        feature_width(self.joint_count())
    }
}

pub fn feature_width(joint_count: usize) -> usize {
    3 * joint_count + 7
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body22_layout() {
        let s = SkeletonSpec::body22();
        assert_eq!(s.joint_count(), 22);
        assert_eq!(s.feature_width(), 73);
    }

    #[test]
    fn rejects_cycles_and_orphans() {
        let names = vec!["a".into(), "b".into(), "c".into()];
        assert!(SkeletonSpec::new(names.clone(), vec![None, Some(2), Some(1)]).is_err());
        assert!(SkeletonSpec::new(names.clone(), vec![None, None, Some(1)]).is_err());
        assert!(SkeletonSpec::new(names, vec![None, Some(0), Some(1)]).is_ok());
        assert!(SkeletonSpec::new(vec!["a".into()], vec![None]).is_err());
    }
}
