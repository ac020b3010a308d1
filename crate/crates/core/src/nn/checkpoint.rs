//! Checkpoint files: a text header followed by a little-endian `f64` block.
//!
//! ```text
//! checkpoint v1
//! step <n>
//! meta <single-line JSON>
//! layers <count>
//! <name> <JSON LayerSpec>          (one per layer)
//! params <count>
//! <name> <rows> <cols> <trainable> (one per parameter)
//! data
//! <values of every parameter in order, 8 bytes each>
//! ```
//!
//! Values are always stored as `f64` whatever the in-memory scalar type.

use std::io::Write;
use std::path::Path;

use super::layers::LayerSpec;
use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub step: u64,
    /// Model-specific configuration, restored by the owning model.
    pub meta: serde_json::Value,
    pub layers: Vec<(String, LayerSpec)>,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, header: &CheckpointHeader, store: &ParamStore<T>) -> Result<()> {
    let mut out = Vec::new();
    let mut text = String::from("checkpoint v1\n");
    text.push_str(&format!("step {}\n", header.step));
    text.push_str(&format!("meta {}\n", header.meta));
    text.push_str(&format!("layers {}\n", header.layers.len()));
    for (name, spec) in &header.layers {
        let json = serde_json::to_string(spec).expect("layer spec serializes");
        text.push_str(&format!("{name} {json}\n"));
    }
    text.push_str(&format!("params {}\n", store.len()));
    for (_, p) in store.iter() {
        let (r, c) = (p.value.rows(), p.value.cols());
        text.push_str(&format!("{} {r} {c} {}\n", p.name, p.trainable));
    }
    text.push_str("data\n");
    out.extend_from_slice(text.as_bytes());
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads only the header.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(path, &bytes)?.0)
}

/// Loads values into `store`, whose parameter names, order and shapes must
/// match the file exactly. Trainable flags are restored too. Nothing is
/// modified unless the whole manifest matches.
pub fn load_checkpoint<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, entries, data) = parse(path, &bytes)?;
    if entries.len() != store.len() {
        return Err(Error::parse(
            path,
            0,
            format!("checkpoint has {} parameters, model has {}", entries.len(), store.len()),
        ));
    }
    for ((_, p), e) in store.iter().zip(&entries) {
        if p.name != e.name || p.value.rows() != e.rows || p.value.cols() != e.cols {
            return Err(Error::parse(
                path,
                0,
                format!(
                    "parameter {} {}x{} does not match model parameter {} {}x{}",
                    e.name,
                    e.rows,
                    e.cols,
                    p.name,
                    p.value.rows(),
                    p.value.cols()
                ),
            ));
        }
    }
    let total: usize = entries.iter().map(|e| e.rows * e.cols).sum();
    if data.len() != total * 8 {
        return Err(Error::parse(
            path,
            0,
            format!("data block holds {} bytes, expected {}", data.len(), total * 8),
        ));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))));
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, e) in ids.into_iter().zip(&entries) {
        let v: Vec<T> = values.by_ref().take(e.rows * e.cols).collect();
        let p = store.get_mut(id);
        p.value = Tensor::matrix(e.rows, e.cols, v)?;
        p.trainable = e.trainable;
    }
    Ok(header)
}

fn parse<'a>(path: &Path, bytes: &'a [u8]) -> Result<(CheckpointHeader, Vec<ParamEntry>, &'a [u8])> {
    let marker = b"\ndata\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, 0, "missing data section"))?;
    let text = std::str::from_utf8(&bytes[..split + 1]).map_err(|_| Error::parse(path, 0, "header is not UTF-8"))?;
    let data = &bytes[split + marker.len()..];
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(path, 0, format!("missing {what}")));

    let (n, l) = next("magic")?;
    if l != "checkpoint v1" {
        return Err(Error::parse(path, n, format!("unsupported header {l:?}")));
    }
    let field = |n: usize, l: &'a str, key: &str| -> Result<&'a str> {
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::parse(path, n, format!("expected `{key}`")))
    };
    let num = |n: usize, s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::parse(path, n, format!("bad number {s:?}")))
    };

    let (n, l) = next("step")?;
    let step = num(n, field(n, l, "step")?)? as u64;
    let (n, l) = next("meta")?;
    let meta = serde_json::from_str(field(n, l, "meta")?).map_err(|e| Error::parse(path, n, e.to_string()))?;
    let (n, l) = next("layers")?;
    let layer_count = num(n, field(n, l, "layers")?)?;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let (n, l) = next("layer")?;
        let (name, json) = l.split_once(' ').ok_or_else(|| Error::parse(path, n, "malformed layer line"))?;
        let spec = serde_json::from_str(json).map_err(|e| Error::parse(path, n, e.to_string()))?;
        layers.push((name.to_string(), spec));
    }
    let (n, l) = next("params")?;
    let count = num(n, field(n, l, "params")?)?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next("parameter")?;
        let f: Vec<&str> = l.split(' ').collect();
        if f.len() != 4 {
            return Err(Error::parse(path, n, "expected `name rows cols trainable`"));
        }
        let trainable = f[3]
            .parse()
            .map_err(|_| Error::parse(path, n, format!("bad flag {:?}", f[3])))?;
        entries.push(ParamEntry {
            name: f[0].to_string(),
            rows: num(n, f[1])?,
            cols: num(n, f[2])?,
            trainable,
        });
    }
    Ok((CheckpointHeader { step, meta, layers }, entries, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 1e-7]).unwrap(), true)
            .unwrap();
        s.add("a.bias", Tensor::matrix(1, 2, vec![0.5, 0.0]).unwrap(), false).unwrap();
        s
    }

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            step: 42,
            meta: serde_json::json!({"width": 2}),
            layers: vec![("a".into(), LayerSpec::Linear { input: 2, output: 2 })],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = store();
        save_checkpoint(&path, &header(), &s).unwrap();
        let mut t = store();
        for id in [crate::nn::ParamId(0), crate::nn::ParamId(1)] {
            t.get_mut(id).value = Tensor::zeros(vec![t.value(id).rows(), t.value(id).cols()]);
        }
        let h = load_checkpoint(&path, &mut t).unwrap();
        assert_eq!(h, header());
        assert_eq!(s, t);
    }

    #[test]
    fn shape_mismatch_is_rejected_before_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &header(), &store()).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("a.weight", Tensor::zeros(vec![2, 3]), true).unwrap();
        other.add("a.bias", Tensor::zeros(vec![1, 2]), true).unwrap();
        let before = other.clone();
        assert!(load_checkpoint(&path, &mut other).is_err());
        assert_eq!(other, before);
    }
}
