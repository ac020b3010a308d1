//! Shared motion types, motion files, dataset manifests and the synthetic corpus.

pub mod io;
pub mod manifest;
pub mod quat;
pub mod sequence;
pub mod skeleton;
pub mod synth;

pub use io::{read_motion, write_motion};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use quat::Quat;
pub use sequence::{GlobalJoints, MotionSequence};
pub use skeleton::SkeletonSpec;
pub use synth::{synthesize, synthesize_dataset, SyntheticClip, SyntheticSpec, TrajectoryFamily};
