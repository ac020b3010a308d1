//! The run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use motiongen_core::conditioning::CurriculumConfig;
use motiongen_core::curation::ChainConfig;
use motiongen_core::maskgen::{DecodeConfig, GenConfig};
use motiongen_core::metrics::{ExtractorConfig, DIVERSITY_PAIRS, R_PRECISION_POOL, TRAJECTORY_THRESHOLD_M};
use motiongen_core::motion::{SyntheticSpec, TrajectoryFamily};
use motiongen_core::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "MOTIONGEN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every stage; stage seeds are derived from it.
    pub seed: u64,
    /// Directory receiving every artifact.
    pub output: PathBuf,
    pub dataset: DatasetSection,
    pub tokenizer: TokenizerConfig,
    pub generator: GenConfig,
    pub curriculum: CurriculumConfig,
    pub decode: DecodeConfig,
    pub curation: ChainConfig,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            tokenizer: TokenizerConfig::default(),
            generator: GenConfig::default(),
            curriculum: CurriculumConfig::default(),
            decode: DecodeConfig::default(),
            curation: ChainConfig::default(),
            metrics: MetricsSection::default(),
        }
    }
}

/// Synthetic corpus parameters. The corpus seed is the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Dataset directory. Defaults to `$MOTIONGEN_DATA_ROOT`, then
    /// `<output>/data`.
    pub root: Option<PathBuf>,
    /// Fraction of accepted records held out for evaluation.
    pub test_fraction: f64,
    pub sequence_count: usize,
    pub length: [usize; 2],
    pub class_count: usize,
    pub beat_period: [usize; 2],
    pub trajectories: Vec<TrajectoryFamily>,
    pub noise: f64,
    pub audio_fraction: f64,
    pub fps: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            root: None,
            test_fraction: 0.125,
            sequence_count: s.sequence_count,
            length: s.length,
            class_count: s.class_count,
            beat_period: s.beat_period,
            trajectories: s.trajectories,
            noise: s.noise,
            audio_fraction: s.audio_fraction,
            fps: s.fps,
        }
    }
}

impl DatasetSection {
    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            sequence_count: self.sequence_count,
            length: self.length,
            class_count: self.class_count,
            beat_period: self.beat_period,
            trajectories: self.trajectories.clone(),
            noise: self.noise,
            audio_fraction: self.audio_fraction,
            fps: self.fps,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub extractor: ExtractorConfig,
    pub diversity_pairs: usize,
    pub r_precision_pool: usize,
    /// Meters.
    pub trajectory_threshold: f64,
    /// Held-out sequences generated for evaluation; 0 means all.
    pub eval_count: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            diversity_pairs: DIVERSITY_PAIRS,
            r_precision_pool: R_PRECISION_POOL,
            trajectory_threshold: TRAJECTORY_THRESHOLD_M,
            eval_count: 0,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config file; errors cite the file and line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
            anyhow::anyhow!("{}:{line}: {}", path.display(), e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }

    /// Applies overrides, fills the dataset root and cross-checks sections.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output = p.clone();
        }
        if let Some(p) = &o.data_root {
            self.dataset.root = Some(p.clone());
        }
        if self.dataset.root.is_none() {
            self.dataset.root = Some(match std::env::var_os(DATA_ROOT_ENV) {
                Some(v) if !v.is_empty() => PathBuf::from(v),
                _ => self.output.join("data"),
            });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.synthetic_spec(self.seed).validate()?;
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            bail!("dataset.test_fraction must lie in (0, 1)");
        }
        self.tokenizer.validate()?;
        self.generator.validate()?;
        self.curriculum.validate()?;
        self.decode.validate()?;
        self.metrics.extractor.validate()?;
        let g = &self.generator;
        let t = &self.tokenizer;
        if g.downsample != t.downsample {
            bail!("generator.downsample ({}) must equal tokenizer.downsample ({})", g.downsample, t.downsample);
        }
        if g.streams != t.depth {
            bail!("generator.streams ({}) must equal tokenizer.depth ({})", g.streams, t.depth);
        }
        let codebook: u64 = t.levels.iter().map(|&l| l as u64).product();
        if g.codebook as u64 != codebook {
            bail!("generator.codebook ({}) must equal the tokenizer codebook ({codebook})", g.codebook);
        }
        if g.text_width != self.dataset.class_count {
            bail!(
                "generator.text_width ({}) must equal dataset.class_count ({})",
                g.text_width,
                self.dataset.class_count
            );
        }
        if self.metrics.r_precision_pool < 2 || self.metrics.diversity_pairs == 0 {
            bail!("metrics.r_precision_pool must be at least 2 and metrics.diversity_pairs positive");
        }
        Ok(())
    }

    pub fn data_root(&self) -> &Path {
        self.dataset.root.as_deref().expect("resolved config has a dataset root")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Seed for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let salt = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3));
        self.seed ^ salt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default().resolve(&Overrides::default()).unwrap();
        let back = RunConfig::parse(&c.to_toml(), Path::new("c.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let err = RunConfig::parse("seed = 1\n\n[tokenizer]\nwidht = 3\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("c.toml:4:"), "{msg}");
        assert!(msg.contains("widht"), "{msg}");
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::parse("seed = 1\noutput = \"a\"\n", Path::new("c.toml")).unwrap();
        let c = c
            .resolve(&Overrides {
                seed: Some(9),
                output: Some("b".into()),
                data_root: Some("d".into()),
            })
            .unwrap();
        assert_eq!((c.seed, c.output.as_path(), c.data_root()), (9, Path::new("b"), Path::new("d")));
    }

    #[test]
    fn mismatched_sections_are_rejected() {
        let mut c = RunConfig::default();
        c.generator.streams = 3;
        assert!(c.resolve(&Overrides::default()).is_err());
    }
}
