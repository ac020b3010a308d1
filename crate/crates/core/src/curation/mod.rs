//! Data-curation filters over candidate clips, beat-alignment dance
//! classification, and the filter chain that combines them.
//!
//! Boundary semantics follow the threshold wording literally: "below X is
//! discarded" passes at X, "outside [a, b] is removed" passes on the closed
//! interval, and "> X is discarded" passes at X.

mod beats;
mod chain;
mod filters;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::{DatasetManifest, MotionSequence};

pub use beats::{bas_from_beats, beat_alignment, motion_beats, BeatAlignment};
pub use chain::{run_chain, ChainConfig, ChainReport, RecordVerdict, DURATION_BINS_S};
pub use filters::{
    filter_2d_quality, filter_bitrate, filter_luminance, filter_motion_score, jerk_score, jump_score,
    luminance_of, root_mutation_score,
};

pub const MIN_NORMALIZED_BITRATE: f64 = 500.0;
pub const LUMINANCE_RANGE: [f64; 2] = [10.0, 210.0];
pub const MOTION_SCORE_RANGE: [f64; 2] = [3.5, 350.0];
pub const MIN_FRAMES: usize = 60;
pub const MIN_BLUR_SCORE: f64 = 0.1;
pub const MIN_KEYPOINT_CONFIDENCE: f64 = 0.6;
pub const MAX_ROOT_MUTATION_DEG: f64 = 30.0;
/// Meters per frame cubed.
pub const MAX_JERK: f64 = 0.015;
pub const MAX_JUMP_MM: f64 = 200.0;
pub const DANCE_BAS: f64 = 0.15;
pub const BAS_SIGMA_FRAMES: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Bitrate,
    Luminance,
    MotionScore,
    Duration,
    Blur,
    Confidence,
    RootMutation,
    Jerk,
    Jump,
}

impl FilterKind {
    /// Documented chain order: video filters, 2D-annotation filters, then
    /// reconstructed-motion filters.
    pub const ALL: [FilterKind; 9] = [
        FilterKind::Bitrate,
        FilterKind::Luminance,
        FilterKind::MotionScore,
        FilterKind::Duration,
        FilterKind::Blur,
        FilterKind::Confidence,
        FilterKind::RootMutation,
        FilterKind::Jerk,
        FilterKind::Jump,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Bitrate => "bitrate",
            FilterKind::Luminance => "luminance",
            FilterKind::MotionScore => "motion_score",
            FilterKind::Duration => "duration",
            FilterKind::Blur => "blur",
            FilterKind::Confidence => "confidence",
            FilterKind::RootMutation => "root_mutation",
            FilterKind::Jerk => "jerk",
            FilterKind::Jump => "jump",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter {s:?}")))
    }
}

/// Pass condition of a filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Passes iff `stat >= x`.
    AtLeast(f64),
    /// Passes iff `a <= stat <= b`.
    Within(f64, f64),
    /// Passes iff `stat <= x`.
    AtMost(f64),
}

impl Threshold {
    pub fn passes(self, stat: f64) -> bool {
        match self {
            Threshold::AtLeast(x) => stat >= x,
            Threshold::Within(a, b) => (a..=b).contains(&stat),
            Threshold::AtMost(x) => stat <= x,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::AtLeast(x) => write!(f, ">={x}"),
            Threshold::Within(a, b) => write!(f, "[{a},{b}]"),
            Threshold::AtMost(x) => write!(f, "<={x}"),
        }
    }
}

/// Outcome of one filter on one record, with the raw statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub filter: FilterKind,
    pub statistic: f64,
    pub threshold: Threshold,
    pub passed: bool,
}

impl FilterVerdict {
    pub(crate) fn new(filter: FilterKind, statistic: f64, threshold: Threshold) -> Self {
        Self {
            filter,
            statistic,
            threshold,
            passed: threshold.passes(statistic),
        }
    }
}

/// Mean frame brightness, either directly or as RGB channel means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Luminance {
    Mean(f64),
    Rgb([f64; 3]),
}

/// Externally measured quality scalars of one clip, as stored in sidecar
/// files. Every field is optional; filters whose inputs are missing do not
/// apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityScalars {
    pub width: Option<u32>,
    pub height: Option<u32>,
    /// Bits per second.
    pub bitrate: Option<f64>,
    pub luminance: Option<Luminance>,
    /// Mean optical-flow magnitude.
    pub motion_score: Option<f64>,
    pub blur: Option<f64>,
    pub confidence: Option<f64>,
}

impl QualityScalars {
    pub fn validate(&self) -> Result<()> {
        if self.width == Some(0) || self.height == Some(0) {
            return Err(invalid!("frame dimensions must be positive"));
        }
        let mut values = vec![self.bitrate, self.motion_score, self.blur, self.confidence];
        match self.luminance {
            Some(Luminance::Mean(x)) => values.push(Some(x)),
            Some(Luminance::Rgb(c)) => values.extend(c.map(Some)),
            None => {}
        }
        if values.into_iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid!("quality scalars must be finite"));
        }
        Ok(())
    }
}

/// One candidate clip for the filter chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationRecord {
    pub id: String,
    pub motion: Option<MotionSequence<f64>>,
    pub scalars: QualityScalars,
    /// Audio beat times in seconds.
    pub audio_beats: Option<Vec<f64>>,
}

impl CurationRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            motion: None,
            scalars: QualityScalars::default(),
            audio_beats: None,
        }
    }

    pub fn with_motion(mut self, m: MotionSequence<f64>) -> Self {
        self.motion = Some(m);
        self
    }

    pub fn with_scalars(mut self, s: QualityScalars) -> Self {
        self.scalars = s;
        self
    }

    fn motion(&self) -> Result<&MotionSequence<f64>> {
        self.motion
            .as_ref()
            .ok_or_else(|| invalid!("record {} has no motion", self.id))
    }
}

/// One record per manifest entry: its motion, its quality sidecar if any,
/// and its beat times when the entry carries audio.
pub fn records_from_manifest(manifest: &DatasetManifest) -> Result<Vec<CurationRecord>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(CurationRecord {
                id: e.id.clone(),
                motion: Some(manifest.load_motion(e)?),
                scalars: manifest.load_quality(e)?.unwrap_or_default(),
                audio_beats: e.has_audio().then(|| e.beat_times.clone()),
            })
        })
        .collect()
}
