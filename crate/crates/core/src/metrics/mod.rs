//! Evaluation metrics: reconstruction error, distribution and retrieval
//! metrics over learned features, and trajectory-control errors.
//!
//! FID, diversity, MMDist and R-precision are computed on the features of
//! a [`FeatureExtractor`] and are only comparable between runs that share
//! its version stamp.

mod extractor;
mod gaussian;
pub mod linalg;
mod motion;
mod report;
mod retrieval;
mod trajectory;

pub use crate::curation::{bas_from_beats, beat_alignment};
pub use extractor::{
    train_feature_extractor, train_feature_extractor_from_manifest, ExtractorConfig, ExtractorReport,
    FeatureExtractor,
};
pub use gaussian::{fid, GaussianSummary, FID_CLAMP_TOL};
pub use motion::mpjpe;
pub use report::{MetricRow, MetricsReport};
pub use retrieval::{diversity, euclidean, mm_dist, r_precision, DIVERSITY_PAIRS, R_PRECISION_POOL};
pub use trajectory::{trajectory_errors, TrajectoryErrors, TRAJECTORY_THRESHOLD_M};
