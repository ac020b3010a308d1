//! Procedural motion corpus.
//!
//! Every clip is a body skeleton whose joints bob vertically in phase with a
//! beat grid while the root follows a line, circle or spline. The class label
//! picks an archetype: which limb groups move, how far, at which harmonic of
//! the beat, and a static pose offset. Archetypes depend on the class index
//! only, so corpora generated with different seeds share them.
//!
//! Emitted condition channels:
//! - text: one row of width `class_count`, the one-hot class embedding;
//! - audio (only for audio-aligned clips): one row per frame,
//!   `[beat impulse, gaussian beat pulse]`;
//! - trajectory: root positions, one row per frame.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::quat::Quat;
use super::skeleton::{SkeletonSpec, BODY22_REST};
use super::{write_motion, MotionSequence};
use crate::curation::{Luminance, QualityScalars};
use crate::conditioning::{write_condition_features, Modality};
use crate::error::{invalid, Error, Result};
use crate::nn::Tensor;

/// Height of the pelvis above the ground plane, meters.
pub const ROOT_HEIGHT: f64 = 0.92;

/// Width of synthetic audio feature rows.
pub const AUDIO_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFamily {
    Line,
    Circle,
    Spline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub sequence_count: usize,
    /// Inclusive clip length range in frames.
    pub length: [usize; 2],
    pub class_count: usize,
    /// Inclusive beat period range in frames.
    pub beat_period: [usize; 2],
    pub trajectories: Vec<TrajectoryFamily>,
    /// Standard deviation of gaussian noise added to local joints, meters.
    pub noise: f64,
    /// Fraction of clips carrying an audio channel.
    pub audio_fraction: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sequence_count: 512,
            length: [64, 96],
            class_count: 8,
            beat_period: [12, 24],
            trajectories: vec![
                TrajectoryFamily::Line,
                TrajectoryFamily::Circle,
                TrajectoryFamily::Spline,
            ],
            noise: 0.001,
            audio_fraction: 0.25,
            fps: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_count == 0 {
            return Err(invalid!("sequence_count must be positive"));
        }
        if self.length[0] < 4 || self.length[0] > self.length[1] {
            return Err(invalid!("length range {:?} is empty or shorter than 4 frames", self.length));
        }
        if self.class_count == 0 {
            return Err(invalid!("class_count must be positive"));
        }
        if self.beat_period[0] < 2 || self.beat_period[0] > self.beat_period[1] {
            return Err(invalid!("beat_period range {:?} is empty or below 2 frames", self.beat_period));
        }
        if self.trajectories.is_empty() {
            return Err(invalid!("at least one trajectory family is required"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(invalid!("noise must be a finite non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.audio_fraction) {
            return Err(invalid!("audio_fraction must lie in [0, 1]"));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(invalid!("fps must be positive"));
        }
        Ok(())
    }
}

/// One generated clip with its condition channels.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub motion: MotionSequence<f64>,
    pub class: usize,
    pub family: TrajectoryFamily,
    pub beat_frames: Vec<usize>,
    pub text: Tensor<f64>,
    pub audio: Option<Tensor<f64>>,
    pub trajectory: Tensor<f64>,
    /// Stand-in for externally measured video and annotation quality.
    pub quality: QualityScalars,
}

impl SyntheticClip {
    pub fn beat_times(&self) -> Vec<f64> {
        let fps = self.motion.fps();
        self.beat_frames.iter().map(|&f| f as f64 / fps).collect()
    }
}

/// Limb groups driven together by an archetype.
const GROUPS: [&[usize]; 5] = [
    &[1, 4, 7, 10],
    &[2, 5, 8, 11],
    &[3, 6, 9, 12, 15],
    &[13, 16, 18, 20],
    &[14, 17, 19, 21],
];

/// Class archetype: per-joint vertical amplitude, harmonic and static offset.
#[derive(Debug, Clone)]
pub struct Archetype {
    pub amplitude: [f64; 22],
    pub harmonic: [f64; 22],
    pub offset: [[f64; 3]; 22],
    pub bob: f64,
}

impl Archetype {
    pub fn for_class(class: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 ^ class as u64);
        let mut amplitude = [0.0; 22];
        let mut harmonic = [1.0; 22];
        let mut offset = [[0.0; 3]; 22];
        let lead = class % GROUPS.len();
        for (g, joints) in GROUPS.iter().enumerate() {
            let (amp, h) = if g == lead {
                (0.10 + 0.05 * rng.random::<f64>(), 1.0 + ((class / GROUPS.len()) % 2) as f64)
            } else {
                (0.04 * rng.random::<f64>(), if rng.random::<bool>() { 2.0 } else { 1.0 })
            };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for (k, &j) in joints.iter().enumerate() {
                let reach = (k + 1) as f64 / joints.len() as f64;
                amplitude[j] = sign * amp * reach;
                harmonic[j] = h;
            }
        }
        for arm in [&GROUPS[3], &GROUPS[4]] {
            let raise = rng.random_range(-0.05..0.25);
            let forward = rng.random_range(0.0..0.2);
            for (k, &j) in arm.iter().enumerate() {
                let reach = (k + 1) as f64 / arm.len() as f64;
                offset[j] = [forward * reach, 0.0, raise * reach];
            }
        }
        let bob = 0.01 + 0.03 * rng.random::<f64>();
        Self {
            amplitude,
            harmonic,
            offset,
            bob,
        }
    }
}

/// One-hot class embedding row.
pub fn class_text_features(class: usize, class_count: usize) -> Tensor<f64> {
    let mut row = vec![0.0; class_count];
    row[class] = 1.0;
    Tensor::matrix(1, class_count, row).expect("row shape")
}

/// Beat impulse and gaussian pulse per frame.
pub fn beat_audio_features(frames: usize, beat_frames: &[usize]) -> Tensor<f64> {
    let mut data = Vec::with_capacity(frames * AUDIO_WIDTH);
    for f in 0..frames {
        let nearest = beat_frames
            .iter()
            .map(|&b| (b as f64 - f as f64).abs())
            .fold(f64::INFINITY, f64::min);
        let impulse = if nearest == 0.0 { 1.0 } else { 0.0 };
        let pulse = if nearest.is_finite() {
            (-nearest * nearest / (2.0 * 1.5 * 1.5)).exp()
        } else {
            0.0
        };
        data.push(impulse);
        data.push(pulse);
    }
    Tensor::matrix(frames, AUDIO_WIDTH, data).expect("audio shape")
}

pub fn trajectory_features(m: &MotionSequence<f64>) -> Tensor<f64> {
    let data = m.root_translation().iter().flatten().copied().collect();
    Tensor::matrix(m.frames(), 3, data).expect("trajectory shape")
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], u: f64) -> [f64; 2] {
    let u2 = u * u;
    let u3 = u2 * u;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * u + (2.0 * a - 5.0 * b + 4.0 * c - d) * u2
            + (-a + 3.0 * b - 3.0 * c + d) * u3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

/// Planar root path starting at the origin, one point per frame.
fn root_path(family: TrajectoryFamily, frames: usize, fps: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let speed = rng.random_range(0.3..1.2);
    let heading = rng.random_range(0.0..2.0 * PI);
    match family {
        TrajectoryFamily::Line => (0..frames)
            .map(|f| {
                let d = speed * f as f64 / fps;
                [d * heading.cos(), d * heading.sin()]
            })
            .collect(),
        TrajectoryFamily::Circle => {
            let radius = rng.random_range(1.0..3.0);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let omega = dir * speed / radius;
            // start angle so that the initial tangent equals `heading`
            let start = heading - dir * PI / 2.0;
            let center = [-radius * start.cos(), -radius * start.sin()];
            (0..frames)
                .map(|f| {
                    let a = start + omega * f as f64 / fps;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect()
        }
        TrajectoryFamily::Spline => {
            let seg = 32usize;
            let segments = frames.div_ceil(seg) + 1;
            let step = speed * seg as f64 / fps;
            let mut pts = vec![[0.0, 0.0]];
            let mut h = heading;
            for _ in 0..segments + 1 {
                let last = *pts.last().unwrap();
                pts.push([last[0] + step * h.cos(), last[1] + step * h.sin()]);
                h += rng.random_range(-0.8..0.8);
            }
            let first = [2.0 * pts[0][0] - pts[1][0], 2.0 * pts[0][1] - pts[1][1]];
            pts.insert(0, first);
            (0..frames)
                .map(|f| {
                    let s = f / seg;
                    let u = (f % seg) as f64 / seg as f64;
                    catmull_rom(pts[s], pts[s + 1], pts[s + 2], pts[s + 3], u)
                })
                .collect()
        }
    }
}

fn headings(path: &[[f64; 2]], fallback: f64) -> Vec<f64> {
    let n = path.len();
    let mut out = Vec::with_capacity(n);
    let mut last = fallback;
    for i in 0..n {
        let (a, b) = match n {
            1 => (0, 0),
            _ if i == 0 => (0, 1),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        let d = [path[b][0] - path[a][0], path[b][1] - path[a][1]];
        if d[0].hypot(d[1]) > 1e-12 {
            // unwrap so that the quaternion track stays continuous
            let a = d[1].atan2(d[0]);
            last = a + 2.0 * PI * ((last - a) / (2.0 * PI)).round();
        }
        out.push(last);
    }
    out
}

/// Generates one clip from explicit parameters. `noise` draws come from `rng`.
#[allow(clippy::too_many_arguments)]
fn make_clip(
    frames: usize,
    fps: f64,
    class: usize,
    class_count: usize,
    period: usize,
    beat_offset: usize,
    family: TrajectoryFamily,
    noise: f64,
    with_audio: bool,
    rng: &mut ChaCha8Rng,
    quality: QualityScalars,
) -> Result<SyntheticClip> {
    let skeleton = SkeletonSpec::shared_body22();
    let arch = Archetype::for_class(class);
    let path = root_path(family, frames, fps, rng);
    let yaw = headings(&path, 0.0);
    let noise_dist = Normal::new(0.0, noise.max(0.0)).map_err(|e| invalid!("noise: {e}"))?;
    let beat_frames: Vec<usize> = (beat_offset..frames).step_by(period).collect();

    let mut root_translation = Vec::with_capacity(frames);
    let mut root_rotation = Vec::with_capacity(frames);
    let mut local = Vec::with_capacity(frames * 22);
    for f in 0..frames {
        let phase = PI * (f as f64 - beat_offset as f64) / period as f64;
        root_translation.push([path[f][0], path[f][1], ROOT_HEIGHT + arch.bob * phase.cos()]);
        root_rotation.push(Quat::from_yaw(yaw[f]));
        for j in 0..22 {
            let rest = BODY22_REST[j];
            let off = arch.offset[j];
            let dz = arch.amplitude[j] * (arch.harmonic[j] * phase).cos();
            let mut p = [rest[0] + off[0], rest[1] + off[1], rest[2] + off[2] + dz];
            if j > 0 && noise > 0.0 {
                for c in &mut p {
                    *c += noise_dist.sample(rng);
                }
            }
            local.push(p);
        }
    }
    let motion = MotionSequence::new(skeleton, fps, root_translation, root_rotation, local)?;
    let trajectory = trajectory_features(&motion);
    Ok(SyntheticClip {
        text: class_text_features(class, class_count),
        audio: with_audio.then(|| beat_audio_features(frames, &beat_frames)),
        trajectory,
        motion,
        class,
        family,
        beat_frames,
        quality,
    })
}

/// Generates the corpus in memory. Fully determined by `spec` (including its seed).
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut quality_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ QUALITY_SALT);
    let mut clips = Vec::with_capacity(spec.sequence_count);
    for _ in 0..spec.sequence_count {
        let frames = rng.random_range(spec.length[0]..=spec.length[1]);
        let class = rng.random_range(0..spec.class_count);
        let period = rng.random_range(spec.beat_period[0]..=spec.beat_period[1]);
        let beat_offset = rng.random_range(0..period);
        let family = spec.trajectories[rng.random_range(0..spec.trajectories.len())];
        let with_audio = rng.random::<f64>() < spec.audio_fraction;
        let mut clip_rng = ChaCha8Rng::seed_from_u64(rng.random());
        clips.push(make_clip(
            frames,
            spec.fps,
            class,
            spec.class_count,
            period,
            beat_offset,
            family,
            spec.noise,
            with_audio,
            &mut clip_rng,
            synthetic_quality(&mut quality_rng),
        )?);
    }
    Ok(clips)
}

const QUALITY_SALT: u64 = 0x5175_616c;

/// Quality scalars for a 1920×1080 clip. Each scalar is drawn uniformly
/// over a range extending a little past its curation threshold, so a
/// minority of clips fail one or more filters.
pub fn synthetic_quality(rng: &mut impl Rng) -> QualityScalars {
    QualityScalars {
        width: Some(1920),
        height: Some(1080),
        bitrate: Some(rng.random_range(6.0e5..4.0e6)),
        luminance: Some(Luminance::Rgb([
            rng.random_range(20.0..200.0),
            rng.random_range(30.0..220.0),
            rng.random_range(20.0..200.0),
        ])),
        motion_score: Some(rng.random_range(2.0..120.0)),
        blur: Some(rng.random_range(0.05..1.0)),
        confidence: Some(rng.random_range(0.55..1.0)),
    }
}

/// Writes clips under `root` and returns the manifest (also written to disk).
pub fn write_dataset(clips: &[SyntheticClip], root: &Path) -> Result<DatasetManifest> {
    for dir in ["motions", "conditions", "quality"] {
        let p = root.join(dir);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let id = format!("{i:06}");
        let motion = Path::new("motions").join(format!("{id}.motion"));
        write_motion(&clip.motion, &root.join(&motion))?;
        let text = Path::new("conditions").join(format!("{id}.text.cond"));
        write_condition_features(&root.join(&text), Modality::Text, &clip.text)?;
        let traj = Path::new("conditions").join(format!("{id}.traj.cond"));
        write_condition_features(&root.join(&traj), Modality::Trajectory, &clip.trajectory)?;
        let quality = Path::new("quality").join(format!("{id}.quality.json"));
        let json = serde_json::to_string_pretty(&clip.quality).expect("quality scalars serialize");
        let qpath = root.join(&quality);
        std::fs::write(&qpath, json + "\n").map_err(|e| Error::io(&qpath, e))?;
        let audio = match &clip.audio {
            Some(a) => {
                let p = Path::new("conditions").join(format!("{id}.audio.cond"));
                write_condition_features(&root.join(&p), Modality::Audio, a)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id,
            motion,
            text: Some(text),
            audio,
            trajectory: Some(traj.clone()),
            class: clip.class,
            beat_times: clip.beat_times(),
            root_trajectory: traj,
            quality: Some(quality),
        });
    }
    let manifest = DatasetManifest::new(root, entries);
    manifest.write()?;
    Ok(manifest)
}

pub fn synthesize_dataset(spec: &SyntheticSpec, root: &Path) -> Result<DatasetManifest> {
    let clips = synthesize(spec)?;
    write_dataset(&clips, root)
}

/// A clip without rhythmic structure: every joint drifts along a sum of two
/// slow sinusoids with random periods of 3 to 9 seconds and random phases.
/// Used to check that beat alignment rejects non-rhythmic motion.
pub fn aperiodic_clip(frames: usize, fps: f64, seed: u64) -> Result<MotionSequence<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut waves = [[[0.0f64; 3]; 2]; 22];
    for joint in waves.iter_mut().skip(1) {
        for wave in joint.iter_mut() {
            let period = rng.random_range(3.0..9.0) * fps;
            *wave = [rng.random_range(0.02..0.08), 2.0 * PI / period, rng.random_range(0.0..2.0 * PI)];
        }
    }
    let mut local = Vec::with_capacity(frames * 22);
    for f in 0..frames {
        for (j, joint) in waves.iter().enumerate() {
            let r = BODY22_REST[j];
            let mut p = r;
            for (c, w) in joint.iter().enumerate() {
                // Each wave moves the joint along its own axis pair.
                let d = w[0] * (w[1] * f as f64 + w[2]).sin();
                p[c] += d;
                p[(c + 1) % 3] += 0.5 * d;
            }
            local.push(p);
        }
    }
    MotionSequence::new(
        SkeletonSpec::shared_body22(),
        fps,
        vec![[0.0, 0.0, ROOT_HEIGHT]; frames],
        vec![Quat::identity(); frames],
        local,
    )
}
