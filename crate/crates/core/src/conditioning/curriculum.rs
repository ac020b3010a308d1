//! Three-stage training curriculum: which parameter groups train in each
//! stage, and which samples (with which conditions) make up an epoch.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Modality;
use crate::error::{invalid, Result};
use crate::nn::ParamStore;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::I, Stage::II, Stage::III];

    /// Parameter groups updated in this stage.
    pub fn trainable_groups(self) -> &'static [&'static str] {
        match self {
            Stage::I => &["text", "embed", "backbone", "head"],
            Stage::II => &["audio", "traj"],
            Stage::III => &PARAM_GROUPS,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        })
    }
}

/// Generator parameter groups. A parameter named `gen.<group>.…` belongs to
/// `<group>`.
pub const PARAM_GROUPS: [&str; 6] = ["text", "audio", "traj", "embed", "backbone", "head"];

pub fn param_group(name: &str) -> Option<&'static str> {
    let rest = name.strip_prefix("gen.")?;
    let head = rest.split('.').next()?;
    PARAM_GROUPS.iter().copied().find(|g| *g == head)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezePlan {
    pub stage: Stage,
    /// Exact names of the parameters that train in this stage.
    pub trainable: BTreeSet<String>,
}

impl FreezePlan {
    pub fn apply<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.set_trainable(|n| self.trainable.contains(n));
    }
}

/// Trainable parameter names for `stage`. Every parameter must belong to a
/// known group.
pub fn build_stage<T: Scalar>(stage: Stage, store: &ParamStore<T>) -> Result<FreezePlan> {
    let groups = stage.trainable_groups();
    let mut trainable = BTreeSet::new();
    for name in store.names() {
        let group = param_group(name).ok_or_else(|| invalid!("parameter {name} belongs to no known group"))?;
        if groups.contains(&group) {
            trainable.insert(name.to_string());
        }
    }
    Ok(FreezePlan { stage, trainable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Epochs spent in stages I, II and III.
    pub stage_epochs: [usize; 3],
    /// Fraction of text-only entries drawn per stage-III epoch.
    pub text_fraction: f64,
    /// Probability of injecting the complementary modality in stage III.
    pub augment_prob: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            stage_epochs: [60, 20, 40],
            text_fraction: 0.10,
            augment_prob: 0.1,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("text_fraction", self.text_fraction), ("augment_prob", self.augment_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid!("{name} = {p} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One training sample of an epoch: a dataset index and the conditions fed
/// with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochSample {
    pub index: usize,
    pub modalities: Vec<Modality>,
}

/// Epoch composition for `stage`. `has_audio[i]` tells whether entry `i` is
/// audio-aligned; every entry has text and a trajectory.
///
/// - I: every entry, text only.
/// - II: audio-aligned entries with audio and trajectory.
/// - III: see [`sample_stage3_epoch`].
pub fn stage_samples(
    stage: Stage,
    has_audio: &[bool],
    cfg: &CurriculumConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EpochSample>> {
    Ok(match stage {
        Stage::I => (0..has_audio.len())
            .map(|index| EpochSample {
                index,
                modalities: vec![Modality::Text],
            })
            .collect(),
        Stage::II => {
            if !has_audio.contains(&true) {
                log::warn!("stage II: no audio-aligned entries; the stage is empty");
            }
            has_audio
                .iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(index, _)| EpochSample {
                    index,
                    modalities: vec![Modality::Audio, Modality::Trajectory],
                })
                .collect()
        }
        Stage::III => sample_stage3_epoch(has_audio, cfg, rng)?,
    })
}

/// Every audio-aligned entry (audio + trajectory, text injected with
/// `augment_prob`) plus each text-only entry independently with probability
/// `text_fraction` (text, trajectory injected with `augment_prob`). Returned
/// in index order.
pub fn sample_stage3_epoch(
    has_audio: &[bool],
    cfg: &CurriculumConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EpochSample>> {
    cfg.validate()?;
    if !has_audio.contains(&true) {
        log::warn!("stage III: no audio-aligned entries; the epoch is text-only");
    }
    let mut out = Vec::new();
    for (index, &audio) in has_audio.iter().enumerate() {
        if audio {
            let mut modalities = vec![Modality::Audio, Modality::Trajectory];
            if rng.random::<f64>() < cfg.augment_prob {
                modalities.insert(0, Modality::Text);
            }
            out.push(EpochSample { index, modalities });
        } else if rng.random::<f64>() < cfg.text_fraction {
            let mut modalities = vec![Modality::Text];
            if rng.random::<f64>() < cfg.augment_prob {
                modalities.push(Modality::Trajectory);
            }
            out.push(EpochSample { index, modalities });
        }
    }
    Ok(out)
}
