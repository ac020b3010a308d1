use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::beats::{beat_alignment, BeatAlignment};
use super::filters::{filter_bitrate, filter_luminance, filter_motion_score, jerk_score, jump_score, root_mutation_score};
use super::{
    CurationRecord, FilterKind, FilterVerdict, Threshold, BAS_SIGMA_FRAMES, MIN_BLUR_SCORE, MIN_FRAMES,
    MIN_KEYPOINT_CONFIDENCE,
};
use crate::error::{invalid, Result};

/// Upper edges of the accepted-duration histogram bins, seconds. The last
/// bin is open-ended.
pub const DURATION_BINS_S: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    /// Filters to run, in order.
    pub filters: Vec<FilterKind>,
    pub bas_sigma_frames: f64,
    /// Score beat alignment for records with motion and audio beats.
    pub classify_dance: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            filters: FilterKind::ALL.to_vec(),
            bas_sigma_frames: BAS_SIGMA_FRAMES,
            classify_dance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordVerdict {
    pub id: String,
    /// Applicable filters only, in chain order.
    pub checks: Vec<FilterVerdict>,
    /// AND over `checks`.
    pub accepted: bool,
    pub dance: Option<BeatAlignment>,
    /// Clip length in seconds, when the record has motion.
    pub duration_s: Option<f64>,
}

impl RecordVerdict {
    pub fn failed(&self) -> impl Iterator<Item = &FilterVerdict> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub verdicts: Vec<RecordVerdict>,
    /// Records failing each filter. A record failing several filters counts
    /// once under each.
    pub rejections: BTreeMap<FilterKind, usize>,
    /// Accepted records per duration bin; one more entry than
    /// [`DURATION_BINS_S`].
    pub duration_histogram: Vec<usize>,
}

impl ChainReport {
    pub fn accepted_ids(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|v| v.accepted).map(|v| v.id.as_str()).collect()
    }

    /// Tab-separated rows: record, filter, statistic, threshold, verdict.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("record\tfilter\tstatistic\tthreshold\tverdict\n");
        for v in &self.verdicts {
            for c in &v.checks {
                let verdict = if c.passed { "pass" } else { "fail" };
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{verdict}", v.id, c.filter, c.statistic, c.threshold);
            }
            if let Some(d) = &v.dance {
                let verdict = if d.dance { "dance" } else { "non_dance" };
                let _ = writeln!(out, "{}\tbas\t{}\t>{}\t{verdict}", v.id, d.bas, super::DANCE_BAS);
            }
            let _ = writeln!(out, "{}\taccept\t\t\t{}", v.id, if v.accepted { "pass" } else { "fail" });
        }
        out
    }

    /// Human-readable summary of rejection counts and accepted durations.
    pub fn summary(&self) -> String {
        let accepted = self.verdicts.iter().filter(|v| v.accepted).count();
        let mut out = format!("accepted {accepted} of {}\n", self.verdicts.len());
        for (k, n) in &self.rejections {
            let _ = writeln!(out, "rejected by {k}: {n}");
        }
        let mut lo = 0.0;
        for (i, n) in self.duration_histogram.iter().enumerate() {
            match DURATION_BINS_S.get(i) {
                Some(hi) => {
                    let _ = writeln!(out, "duration [{lo}, {hi}) s: {n}");
                    lo = *hi;
                }
                None => {
                    let _ = writeln!(out, "duration >= {lo} s: {n}");
                }
            }
        }
        out
    }
}

/// Runs one filter, or returns `None` when the record lacks its inputs.
fn check(kind: FilterKind, rec: &CurationRecord) -> Result<Option<FilterVerdict>> {
    let s = &rec.scalars;
    let m = rec.motion.as_ref();
    let v = match kind {
        FilterKind::Bitrate if s.width.is_some() && s.height.is_some() && s.bitrate.is_some() => filter_bitrate(rec)?,
        FilterKind::Luminance if s.luminance.is_some() => filter_luminance(rec)?,
        FilterKind::MotionScore if s.motion_score.is_some() => filter_motion_score(rec)?,
        FilterKind::Duration => match m {
            Some(m) => FilterVerdict::new(kind, m.frames() as f64, Threshold::AtLeast(MIN_FRAMES as f64)),
            None => return Ok(None),
        },
        FilterKind::Blur => match s.blur {
            Some(b) => FilterVerdict::new(kind, b, Threshold::AtLeast(MIN_BLUR_SCORE)),
            None => return Ok(None),
        },
        FilterKind::Confidence => match s.confidence {
            Some(c) => FilterVerdict::new(kind, c, Threshold::AtLeast(MIN_KEYPOINT_CONFIDENCE)),
            None => return Ok(None),
        },
        FilterKind::RootMutation => match m {
            Some(m) if m.frames() >= 2 => root_mutation_score(m)?,
            _ => return Ok(None),
        },
        FilterKind::Jerk => match m {
            Some(m) if m.frames() >= 4 => jerk_score(m)?,
            _ => return Ok(None),
        },
        FilterKind::Jump => match m {
            Some(m) if m.frames() >= 2 => jump_score(m)?,
            _ => return Ok(None),
        },
        _ => return Ok(None),
    };
    Ok(Some(v))
}

fn duration_bin(seconds: f64) -> usize {
    DURATION_BINS_S.iter().take_while(|&&edge| seconds >= edge).count()
}

/// Runs the configured filters over every record. Filters whose inputs a
/// record lacks do not apply to it; a record is accepted iff every
/// applicable filter passes.
pub fn run_chain(records: &[CurationRecord], cfg: &ChainConfig) -> Result<ChainReport> {
    if !(cfg.bas_sigma_frames > 0.0) {
        return Err(invalid!("bas_sigma_frames must be positive"));
    }
    let mut seen = std::collections::HashSet::new();
    for k in &cfg.filters {
        if !seen.insert(*k) {
            return Err(invalid!("filter {k} listed twice"));
        }
    }
    let mut verdicts = Vec::with_capacity(records.len());
    let mut rejections: BTreeMap<FilterKind, usize> = cfg.filters.iter().map(|&k| (k, 0)).collect();
    let mut histogram = vec![0; DURATION_BINS_S.len() + 1];
    for rec in records {
        rec.scalars.validate().map_err(|e| invalid!("record {}: {e}", rec.id))?;
        let mut checks = Vec::new();
        for &kind in &cfg.filters {
            if let Some(v) = check(kind, rec)? {
                if !v.passed {
                    *rejections.entry(kind).or_default() += 1;
                }
                checks.push(v);
            }
        }
        let accepted = checks.iter().all(|c| c.passed);
        let duration_s = rec.motion.as_ref().map(|m| m.frames() as f64 / m.fps());
        if accepted {
            if let Some(d) = duration_s {
                histogram[duration_bin(d)] += 1;
            }
        }
        let dance = match (&rec.motion, &rec.audio_beats) {
            (Some(m), Some(beats)) if cfg.classify_dance && !beats.is_empty() => {
                Some(beat_alignment(m, beats, cfg.bas_sigma_frames)?)
            }
            _ => None,
        };
        verdicts.push(RecordVerdict {
            id: rec.id.clone(),
            checks,
            accepted,
            dance,
            duration_s,
        });
    }
    Ok(ChainReport {
        verdicts,
        rejections,
        duration_histogram: histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{Luminance, QualityScalars};
    use crate::motion::synth::aperiodic_clip;

    fn good(id: &str, frames: usize) -> CurationRecord {
        CurationRecord::new(id)
            .with_motion(aperiodic_clip(frames, 30.0, 3).unwrap())
            .with_scalars(QualityScalars {
                width: Some(1920),
                height: Some(1080),
                bitrate: Some(2.0e6),
                luminance: Some(Luminance::Rgb([120.0, 128.0, 90.0])),
                motion_score: Some(20.0),
                blur: Some(0.5),
                confidence: Some(0.9),
            })
    }

    #[test]
    fn all_passing_corpus_is_kept() {
        let recs: Vec<_> = (0..4).map(|i| good(&format!("r{i}"), 90 + 60 * i)).collect();
        let report = run_chain(&recs, &ChainConfig::default()).unwrap();
        assert_eq!(report.accepted_ids(), vec!["r0", "r1", "r2", "r3"]);
        assert!(report.rejections.values().all(|&n| n == 0));
        assert!(report.verdicts.iter().all(|v| v.checks.len() == 9));
        // 3 s, 5 s, 7 s, 9 s.
        assert_eq!(report.duration_histogram, vec![0, 1, 1, 1, 1, 0]);
    }

    #[test]
    fn single_failure_is_attributed() {
        let mut bad = good("dark", 90);
        bad.scalars.luminance = Some(Luminance::Mean(5.0));
        let recs = vec![good("ok", 90), bad];
        let report = run_chain(&recs, &ChainConfig::default()).unwrap();
        assert_eq!(report.accepted_ids(), vec!["ok"]);
        assert_eq!(report.rejections[&FilterKind::Luminance], 1);
        assert_eq!(report.rejections.values().sum::<usize>(), 1);
        let failed: Vec<_> = report.verdicts[1].failed().map(|c| c.filter).collect();
        assert_eq!(failed, vec![FilterKind::Luminance]);
        assert!(report.to_tsv().contains("dark\tluminance\t5\t[10,210]\tfail"));
    }

    #[test]
    fn missing_inputs_make_filters_inapplicable() {
        let rec = CurationRecord::new("bare").with_scalars(QualityScalars {
            motion_score: Some(1.0),
            ..QualityScalars::default()
        });
        let report = run_chain(&[rec], &ChainConfig::default()).unwrap();
        assert_eq!(report.verdicts[0].checks.len(), 1);
        assert!(!report.verdicts[0].accepted);
    }

    #[test]
    fn accept_set_is_order_independent() {
        let mut recs = Vec::new();
        for i in 0..6 {
            let mut r = good(&format!("r{i}"), 45 + 15 * i);
            if i % 2 == 0 {
                r.scalars.blur = Some(0.05 + 0.02 * i as f64);
            }
            if i == 3 {
                r.scalars.bitrate = Some(1.0e5);
            }
            recs.push(r);
        }
        let base = run_chain(&recs, &ChainConfig::default()).unwrap();
        let mut order = FilterKind::ALL.to_vec();
        order.reverse();
        order.rotate_left(4);
        let cfg = ChainConfig {
            filters: order,
            ..ChainConfig::default()
        };
        let permuted = run_chain(&recs, &cfg).unwrap();
        assert_eq!(base.accepted_ids(), permuted.accepted_ids());
        assert_eq!(base.rejections, permuted.rejections);
    }

    #[test]
    fn rejects_bad_config_and_records() {
        let cfg = ChainConfig {
            filters: vec![FilterKind::Jerk, FilterKind::Jerk],
            ..ChainConfig::default()
        };
        assert!(run_chain(&[], &cfg).is_err());
        let mut r = good("nan", 90);
        r.scalars.blur = Some(f64::NAN);
        assert!(run_chain(&[r], &ChainConfig::default()).is_err());
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(duration_bin(1.9), 0);
        assert_eq!(duration_bin(2.0), 1);
        assert_eq!(duration_bin(9.99), 4);
        assert_eq!(duration_bin(10.0), 5);
    }
}
