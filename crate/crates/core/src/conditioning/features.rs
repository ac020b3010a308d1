//! Condition feature files and the per-sample condition set.
//!
//! ```text
//! condition v1
//! modality audio
//! width 2
//! rows 64
//! <width numbers per row>
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::io::fmt_num;
use crate::nn::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Trajectory,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Trajectory];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Trajectory => "trajectory",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "trajectory" | "traj" => Ok(Modality::Trajectory),
            other => Err(invalid!("unknown modality {other:?}")),
        }
    }
}

const MAGIC: &str = "condition v1";

pub fn features_to_string<T: Scalar>(modality: Modality, m: &Tensor<T>) -> String {
    let mut s = format!(
        "{MAGIC}\nmodality {modality}\nwidth {}\nrows {}\n",
        m.cols(),
        m.rows()
    );
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| fmt_num(v.as_f64())).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_condition_features<T: Scalar>(
    path: &Path,
    modality: Modality,
    m: &Tensor<T>,
) -> Result<()> {
    std::fs::write(path, features_to_string(modality, m)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file, checking its modality tag and (when given) its width.
pub fn load_condition_features<T: Scalar>(
    path: &Path,
    modality: Modality,
    expected_width: Option<usize>,
) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |key: &str| -> Result<(usize, String)> {
        let (no, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing `{key}`")))?;
        Ok((no, l.to_string()))
    };
    let (_, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(Error::parse(path, 1, format!("expected `{MAGIC}`")));
    }
    let field = |no: usize, line: &str, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| r.trim().to_string())
            .ok_or_else(|| Error::parse(path, no, format!("expected `{key} <value>`")))
    };
    let (no, l) = next("modality")?;
    let found: Modality = field(no, &l, "modality")?
        .parse()
        .map_err(|e: Error| Error::parse(path, no, e.to_string()))?;
    if found != modality {
        return Err(Error::parse(
            path,
            no,
            format!("file holds {found} features, expected {modality}"),
        ));
    }
    let (no, l) = next("width")?;
    let width: usize = field(no, &l, "width")?
        .parse()
        .map_err(|_| Error::parse(path, no, "invalid width"))?;
    if let Some(w) = expected_width {
        if w != width {
            return Err(Error::parse(
                path,
                no,
                format!("{modality} feature width {width} does not match configured width {w}"),
            ));
        }
    }
    let (no, l) = next("rows")?;
    let rows: usize = field(no, &l, "rows")?
        .parse()
        .map_err(|_| Error::parse(path, no, "invalid row count"))?;
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        let (no, l) = next("row")?;
        let before = data.len();
        for (i, tok) in l.split_whitespace().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, no, format!("field {i}: invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, no, format!("field {i}: non-finite value")));
            }
            data.push(T::lit(v));
        }
        if data.len() - before != width {
            return Err(Error::parse(
                path,
                no,
                format!("row {r}: expected {width} fields, found {}", data.len() - before),
            ));
        }
    }
    Tensor::matrix(rows, width, data)
}

/// Optional text, audio and trajectory inputs of one sample.
///
/// Text and audio hold raw precomputed features; the trajectory holds root
/// positions in meters (`T × 3`). Absent modalities contribute no prefix
/// positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionSet<T> {
    pub text: Option<Tensor<T>>,
    pub audio: Option<Tensor<T>>,
    pub trajectory: Option<Tensor<T>>,
}

impl<T: Scalar> ConditionSet<T> {
    pub fn empty() -> Self {
        Self {
            text: None,
            audio: None,
            trajectory: None,
        }
    }

    pub fn get(&self, m: Modality) -> Option<&Tensor<T>> {
        match m {
            Modality::Text => self.text.as_ref(),
            Modality::Audio => self.audio.as_ref(),
            Modality::Trajectory => self.trajectory.as_ref(),
        }
    }

    pub fn present(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| self.get(*m).is_some())
            .collect()
    }

    /// Keeps only the listed modalities.
    pub fn restrict(&self, keep: &[Modality]) -> Self {
        let pick = |m: Modality, v: &Option<Tensor<T>>| if keep.contains(&m) { v.clone() } else { None };
        Self {
            text: pick(Modality::Text, &self.text),
            audio: pick(Modality::Audio, &self.audio),
            trajectory: pick(Modality::Trajectory, &self.trajectory),
        }
    }

    /// Truncates the frame-rate modalities (audio, trajectory) to their
    /// first `frames` rows; errors if either is shorter.
    pub fn crop_frames(&self, frames: usize) -> Result<Self> {
        let crop = |c: &Option<Tensor<T>>, name: &str| -> Result<Option<Tensor<T>>> {
            match c {
                None => Ok(None),
                Some(m) if m.rows() < frames => Err(invalid!("{name} has {} frames; {frames} are needed", m.rows())),
                Some(m) => Ok(Some(Tensor::matrix(frames, m.cols(), m.data()[..frames * m.cols()].to_vec())?)),
            }
        };
        Ok(Self {
            text: self.text.clone(),
            audio: crop(&self.audio, "audio")?,
            trajectory: crop(&self.trajectory, "trajectory")?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ConditionSet<U> {
        ConditionSet {
            text: self.text.as_ref().map(Tensor::cast),
            audio: self.audio.as_ref().map(Tensor::cast),
            trajectory: self.trajectory.as_ref().map(Tensor::cast),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_width_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cond");
        let m = Tensor::<f64>::matrix(2, 3, vec![0.1, -2.0, 1e-9, 4.0, 5.5, 1.0 / 3.0]).unwrap();
        write_condition_features(&p, Modality::Audio, &m).unwrap();
        let back: Tensor<f64> = load_condition_features(&p, Modality::Audio, Some(3)).unwrap();
        assert_eq!(back, m);
        assert!(load_condition_features::<f64>(&p, Modality::Audio, Some(4)).is_err());
        assert!(load_condition_features::<f64>(&p, Modality::Text, None).is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = load_condition_features::<f64>(Path::new("/nonexistent/x.cond"), Modality::Text, None);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
