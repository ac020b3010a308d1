//! Condition features, the trajectory encoder and the training curriculum.

pub mod curriculum;
pub mod features;
pub mod trajectory;

pub use curriculum::{
    build_stage, param_group, sample_stage3_epoch, stage_samples, CurriculumConfig, EpochSample, FreezePlan, Stage,
};
pub use features::*;
pub use trajectory::TrajectoryEncoder;
