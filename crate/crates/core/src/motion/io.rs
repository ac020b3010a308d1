//! Text motion files.
//!
//! ```text
//! motion v1
//! fps 3.0000000000000000e1
//! frames 64
//! joints 22
//! skeleton pelvis:- left_hip:0 right_hip:0 ...
//! data
//! <D numbers per frame>
//! ```
//!
//! Each data row holds the frame feature vector (local joints, root
//! translation, root quaternion `w x y z`). Numbers are written with 17
//! significant digits so a write/read cycle is bit-exact for `f64`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::quat::Quat;
use super::sequence::MotionSequence;
use super::skeleton::SkeletonSpec;
use crate::error::{Error, Result};
use crate::Scalar;

const MAGIC: &str = "motion v1";

/// Formats a number with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn motion_to_string<T: Scalar>(m: &MotionSequence<T>) -> String {
    let mut s = String::new();
    let sk = m.skeleton();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "fps {}", fmt_num(m.fps().as_f64())).unwrap();
    writeln!(s, "frames {}", m.frames()).unwrap();
    writeln!(s, "joints {}", sk.joint_count()).unwrap();
    s.push_str("skeleton");
    for (name, parent) in sk.joint_names().iter().zip(sk.parents()) {
        match parent {
            Some(p) => write!(s, " {name}:{p}").unwrap(),
            None => write!(s, " {name}:-").unwrap(),
        }
    }
    s.push('\n');
    s.push_str("data\n");
    let d = m.feature_width();
    for row in m.features().chunks_exact(d) {
        let line: Vec<String> = row.iter().map(|v| fmt_num(v.as_f64())).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_motion<T: Scalar>(m: &MotionSequence<T>, path: &Path) -> Result<()> {
    std::fs::write(path, motion_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_motion<T: Scalar>(path: &Path) -> Result<MotionSequence<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text, path)
}

fn header_value<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
    path: &Path,
) -> Result<(usize, &'a str)> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, format!("missing `{key}` header")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::parse(path, no, format!("expected `{key} <value>`, found {line:?}")))?;
    Ok((no, rest.trim()))
}

fn parse_usize(s: &str, what: &str, path: &Path, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("{what}: invalid integer {s:?}")))
}

pub fn parse_motion<T: Scalar>(text: &str, path: &Path) -> Result<MotionSequence<T>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MAGIC}` header"))),
    }
    let (no, fps) = header_value(&mut lines, "fps", path)?;
    let fps: f64 = fps
        .parse()
        .map_err(|_| Error::parse(path, no, format!("fps: invalid number {fps:?}")))?;
    let (no, frames) = header_value(&mut lines, "frames", path)?;
    let frames = parse_usize(frames, "frames", path, no)?;
    if frames == 0 {
        return Err(Error::parse(path, no, "frames must be at least 1"));
    }
    let (no, joints) = header_value(&mut lines, "joints", path)?;
    let joints = parse_usize(joints, "joints", path, no)?;
    let (sk_line, sk) = header_value(&mut lines, "skeleton", path)?;
    let mut names = Vec::with_capacity(joints);
    let mut parents = Vec::with_capacity(joints);
    for (field, item) in sk.split_whitespace().enumerate() {
        let (name, parent) = item.split_once(':').ok_or_else(|| {
            Error::parse(path, sk_line, format!("skeleton field {field}: expected name:parent"))
        })?;
        names.push(name.to_string());
        parents.push(if parent == "-" {
            None
        } else {
            Some(parse_usize(parent, "skeleton parent", path, sk_line)?)
        });
    }
    if names.len() != joints {
        return Err(Error::parse(
            path,
            sk_line,
            format!("skeleton lists {} joints, header says {joints}", names.len()),
        ));
    }
    let skeleton = SkeletonSpec::new(names, parents)
        .map_err(|e| Error::parse(path, sk_line, e.to_string()))?;
    match lines.next() {
        Some((_, "data")) => {}
        Some((no, l)) => return Err(Error::parse(path, no, format!("expected `data`, found {l:?}"))),
        None => return Err(Error::parse(path, sk_line + 1, "missing `data` section")),
    }

    let d = skeleton.feature_width();
    let mut root_translation = Vec::with_capacity(frames);
    let mut root_rotation = Vec::with_capacity(frames);
    let mut local_joints = Vec::with_capacity(frames * joints);
    let mut row = Vec::with_capacity(d);
    for t in 0..frames {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("expected {frames} frames, found {t}")))?;
        row.clear();
        for (field, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(path, no, format!("field {field}: invalid number {tok:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, no, format!("field {field}: non-finite value")));
            }
            row.push(T::lit(v));
        }
        if row.len() != d {
            return Err(Error::parse(
                path,
                no,
                format!("expected {d} fields, found {}", row.len()),
            ));
        }
        for k in 0..joints {
            local_joints.push([row[3 * k], row[3 * k + 1], row[3 * k + 2]]);
        }
        let o = 3 * joints;
        root_translation.push([row[o], row[o + 1], row[o + 2]]);
        let q = Quat::new(row[o + 3], row[o + 4], row[o + 5], row[o + 6]);
        let dev = (q.norm() - T::one()).abs().as_f64();
        if dev > super::sequence::UNIT_QUAT_TOL {
            return Err(Error::parse(
                path,
                no,
                format!("root quaternion is not unit-norm (|q| - 1 = {dev:e})"),
            ));
        }
        root_rotation.push(q);
    }
    if let Some((no, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(path, no, format!("trailing content {l:?}")));
    }
    MotionSequence::new(
        Arc::new(skeleton),
        T::lit(fps),
        root_translation,
        root_rotation,
        local_joints,
    )
    .map_err(|e| Error::parse(path, 0, e.to_string()))
}
