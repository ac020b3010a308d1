//! Token files.
//!
//! ```text
//! tokens v1
//! levels 8 8 8 4
//! depth 4
//! length 16
//! <one line of `length` codes per stream>
//! ```

use std::path::Path;

use super::{RfsqSpec, TokenGrid};
use crate::error::{Error, Result};

const MAGIC: &str = "tokens v1";

pub fn tokens_to_string(tokens: &TokenGrid, spec: &RfsqSpec) -> String {
    let levels: Vec<String> = spec.base().levels().iter().map(u32::to_string).collect();
    let mut s = format!(
        "{MAGIC}\nlevels {}\ndepth {}\nlength {}\n",
        levels.join(" "),
        tokens.depth(),
        tokens.length()
    );
    for v in 0..tokens.depth() {
        let row: Vec<String> = tokens.stream(v).iter().map(u32::to_string).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_tokens(path: &Path, tokens: &TokenGrid, spec: &RfsqSpec) -> Result<()> {
    std::fs::write(path, tokens_to_string(tokens, spec)).map_err(|e| Error::io(path, e))
}

/// Reads a token file and checks its header against `spec`.
pub fn read_tokens(path: &Path, spec: &RfsqSpec) -> Result<TokenGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tokens(&text, path, spec)
}

pub fn parse_tokens(text: &str, path: &Path, spec: &RfsqSpec) -> Result<TokenGrid> {
    let lines: Vec<&str> = text.lines().collect();
    let get = |i: usize, key: &str| -> Result<&str> {
        lines
            .get(i)
            .and_then(|l| l.strip_prefix(key))
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::parse(path, i + 1, format!("expected `{key} ...`")))
    };
    if lines.first().map(|l| l.trim()) != Some(MAGIC) {
        return Err(Error::parse(path, 1, format!("expected `{MAGIC}`")));
    }
    let levels: Vec<u32> = get(1, "levels")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, 2, format!("invalid level {t:?}"))))
        .collect::<Result<_>>()?;
    if levels != spec.base().levels() {
        return Err(Error::parse(
            path,
            2,
            format!(
                "token levels {levels:?} do not match quantizer levels {:?}",
                spec.base().levels()
            ),
        ));
    }
    let depth: usize = get(2, "depth")?
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 3, "invalid depth"))?;
    if depth != spec.depth() {
        return Err(Error::parse(
            path,
            3,
            format!("token depth {depth} does not match quantizer depth {}", spec.depth()),
        ));
    }
    let length: usize = get(3, "length")?
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 4, "invalid length"))?;
    let mut codes = Vec::with_capacity(depth * length);
    for v in 0..depth {
        let no = 5 + v;
        let line = lines
            .get(4 + v)
            .ok_or_else(|| Error::parse(path, no, format!("missing stream {v}")))?;
        let before = codes.len();
        for (i, t) in line.split_whitespace().enumerate() {
            let c: u32 = t
                .parse()
                .map_err(|_| Error::parse(path, no, format!("field {i}: invalid code {t:?}")))?;
            if c >= spec.codebook_size() {
                return Err(Error::parse(
                    path,
                    no,
                    format!("field {i}: code {c} outside codebook of {}", spec.codebook_size()),
                ));
            }
            codes.push(c);
        }
        if codes.len() - before != length {
            return Err(Error::parse(
                path,
                no,
                format!("stream {v}: expected {length} codes, found {}", codes.len() - before),
            ));
        }
    }
    TokenGrid::new(depth, length, codes).map_err(|e| Error::parse(path, 0, e.to_string()))
}
