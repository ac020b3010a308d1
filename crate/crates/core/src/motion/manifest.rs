use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{load_condition_features, ConditionSet, Modality};
use crate::curation::QualityScalars;
use crate::error::{invalid, Error, Result};
use crate::motion::{read_motion, MotionSequence};
use crate::Scalar;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One dataset record. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub motion: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    pub class: usize,
    /// Ground-truth beat times in seconds.
    pub beat_times: Vec<f64>,
    /// Ground-truth root trajectory (`T × 3`, trajectory feature file).
    pub root_trajectory: PathBuf,
    /// Quality-scalar sidecar (JSON) for the curation filters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn condition_path(&self, m: Modality) -> Option<&Path> {
        match m {
            Modality::Text => self.text.as_deref(),
            Modality::Audio => self.audio.as_deref(),
            Modality::Trajectory => self.trajectory.as_deref(),
        }
    }

    pub fn has_audio(&self) -> bool {
        self.audio.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: root.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `manifest.jsonl` (one JSON record per line) under the root.
    pub fn write(&self) -> Result<PathBuf> {
        self.write_as(&self.root.join(MANIFEST_FILE))
    }

    pub fn write_as(&self, path: &Path) -> Result<PathBuf> {
        let mut buf = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut buf, e).expect("manifest entries serialize");
            buf.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(path.to_path_buf())
    }

    /// Reads a manifest file; the root is the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::parse(path, i + 1, err.to_string()))?;
            entries.push(e);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    /// Reads `<root>/manifest.jsonl`.
    pub fn read_root(root: &Path) -> Result<Self> {
        let mut m = Self::read(&root.join(MANIFEST_FILE))?;
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn load_motion<T: Scalar>(&self, entry: &ManifestEntry) -> Result<MotionSequence<T>> {
        read_motion(&self.resolve(&entry.motion))
    }

    /// Loads every condition the entry declares.
    pub fn load_conditions<T: Scalar>(&self, entry: &ManifestEntry) -> Result<ConditionSet<T>> {
        let load = |m: Modality| -> Result<_> {
            entry
                .condition_path(m)
                .map(|p| load_condition_features(&self.resolve(p), m, None))
                .transpose()
        };
        Ok(ConditionSet {
            text: load(Modality::Text)?,
            audio: load(Modality::Audio)?,
            trajectory: load(Modality::Trajectory)?,
        })
    }

    pub fn load_quality(&self, entry: &ManifestEntry) -> Result<Option<QualityScalars>> {
        let Some(rel) = &entry.quality else {
            return Ok(None);
        };
        let path = self.resolve(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let q: QualityScalars = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
        q.validate()?;
        Ok(Some(q))
    }

    pub fn load_root_trajectory<T: Scalar>(&self, entry: &ManifestEntry) -> Result<crate::nn::Tensor<T>> {
        load_condition_features(
            &self.resolve(&entry.root_trajectory),
            Modality::Trajectory,
            Some(3),
        )
    }

    /// Checks that every referenced file exists and parses.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(invalid!("duplicate manifest id {}", e.id));
            }
            let m: MotionSequence<f64> = self.load_motion(e)?;
            self.load_conditions::<f64>(e)?;
            self.load_quality(e)?;
            let traj = self.load_root_trajectory::<f64>(e)?;
            if traj.rows() != m.frames() {
                return Err(invalid!(
                    "{}: root trajectory has {} rows for {} frames",
                    e.id,
                    traj.rows(),
                    m.frames()
                ));
            }
        }
        Ok(())
    }
}
