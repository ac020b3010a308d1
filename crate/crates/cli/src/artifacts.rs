//! Artifact locations under the output directory and helpers to read them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use motiongen_core::maskgen::{GenSample, Generator};
use motiongen_core::motion::{DatasetManifest, ManifestEntry, MotionSequence};
use motiongen_core::rfsq::{read_tokens, TokenGrid};
use motiongen_core::tokenizer::TokenizerModel;
use motiongen_core::Scalar;

use crate::config::RunConfig;

/// Scalar type used for training and inference.
pub type S = f32;

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub out: PathBuf,
    pub data: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            out: cfg.output.clone(),
            data: cfg.data_root().to_path_buf(),
        }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.dir("curate").join(format!("{name}.jsonl"))
    }

    pub fn tokenizer(&self) -> PathBuf {
        self.dir("tokenizer").join("tokenizer.ckpt")
    }

    pub fn tokens(&self, id: &str) -> PathBuf {
        self.dir("tokens").join(format!("{id}.tokens"))
    }

    pub fn generator(&self) -> PathBuf {
        self.dir("generator").join("generator.ckpt")
    }

    /// Creates `<out>/<stage>` and writes the resolved config into it.
    pub fn stage_dir(&self, stage: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self.dir(stage);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("config.toml"), cfg.to_toml())?;
        Ok(dir)
    }

    pub fn load_split(&self, name: &str) -> Result<DatasetManifest> {
        let p = self.split(name);
        require(&p, "curate")?;
        Ok(DatasetManifest::read(&p)?)
    }

    pub fn load_tokenizer(&self) -> Result<TokenizerModel<S>> {
        let p = self.tokenizer();
        require(&p, "train-tokenizer")?;
        Ok(TokenizerModel::load(&p)?)
    }

    pub fn load_generator(&self) -> Result<Generator<S>> {
        let p = self.generator();
        require(&p, "train-gen")?;
        Ok(Generator::load(&p)?)
    }

    pub fn load_tokens(&self, entry: &ManifestEntry, tok: &TokenizerModel<S>) -> Result<TokenGrid> {
        let p = self.tokens(&entry.id);
        require(&p, "tokenize")?;
        Ok(read_tokens(&p, tok.rfsq())?)
    }

    /// Samples with every condition of each entry, cut to the first
    /// `max_len` tokens.
    pub fn load_samples(
        &self,
        manifest: &DatasetManifest,
        tok: &TokenizerModel<S>,
        max_len: usize,
    ) -> Result<Vec<GenSample<S>>> {
        let ds = tok.config().downsample;
        manifest
            .entries
            .iter()
            .map(|e| {
                let tokens = self.load_tokens(e, tok)?;
                let conds = manifest.load_conditions::<S>(e)?;
                let s = GenSample::new(tokens, conds, ds).with_context(|| format!("entry {}", e.id))?;
                if s.tokens.length() > max_len {
                    return Ok(s.window(0, max_len, ds)?);
                }
                Ok(s)
            })
            .collect()
    }
}

/// Errors with the command that produces `path` when it is missing.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}; run `motiongen {producer}` first", path.display());
    }
    Ok(())
}

pub fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Largest prefix of `m` whose length is a multiple of `ds`, capped at
/// `max_frames`.
pub fn crop_motion<T: Scalar>(m: &MotionSequence<T>, ds: usize, max_frames: usize) -> Result<MotionSequence<T>> {
    let frames = (m.frames().min(max_frames) / ds) * ds;
    if frames == 0 {
        bail!("motion of {} frames is shorter than one token ({ds} frames)", m.frames());
    }
    Ok(m.slice(0..frames)?)
}

/// Root positions as `f64` triples.
pub fn root_path<T: Scalar>(m: &MotionSequence<T>) -> Vec<[f64; 3]> {
    m.root_translation().iter().map(|p| [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]).collect()
}
