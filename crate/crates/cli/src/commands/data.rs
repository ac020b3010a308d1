use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use motiongen_core::curation::{records_from_manifest, run_chain};
use motiongen_core::motion::manifest::MANIFEST_FILE;
use motiongen_core::motion::{synthesize_dataset, DatasetManifest, ManifestEntry};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Ctx;
use crate::artifacts::{require, write};

/// Writes the synthetic corpus to the dataset root.
pub fn synth(ctx: &Ctx) -> Result<()> {
    let root = &ctx.art.data;
    let spec = ctx.cfg.dataset.synthetic_spec(ctx.cfg.seed);
    info!("synthesizing {} sequences into {}", spec.sequence_count, root.display());
    let manifest = synthesize_dataset(&spec, root)?;
    write(&root.join("config.toml"), ctx.cfg.to_toml())?;
    info!("wrote {} entries", manifest.len());
    Ok(())
}

/// Runs the filter chain and splits accepted records into train and test.
pub fn curate(ctx: &Ctx) -> Result<()> {
    let root = &ctx.art.data;
    require(&root.join(MANIFEST_FILE), "synth")?;
    let manifest = DatasetManifest::read_root(root)?;
    let dir = ctx.art.stage_dir("curate", &ctx.cfg)?;
    let records = records_from_manifest(&manifest)?;
    let report = run_chain(&records, &ctx.cfg.curation)?;
    write(&dir.join("report.tsv"), report.to_tsv())?;
    let summary = report.summary();
    write(&dir.join("summary.txt"), &summary)?;
    info!("{}", summary.lines().next().unwrap_or_default());

    let accepted: std::collections::BTreeSet<&str> = report.accepted_ids().into_iter().collect();
    let mut entries: Vec<ManifestEntry> =
        manifest.entries.iter().filter(|e| accepted.contains(e.id.as_str())).cloned().collect();
    let n_test = ((entries.len() as f64 * ctx.cfg.dataset.test_fraction).round() as usize).max(1);
    if entries.len() <= n_test {
        bail!("only {} records passed curation; too few to split", entries.len());
    }
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.cfg.stage_seed("curate")));
    let mut test = entries.split_off(entries.len() - n_test);
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let root = std::path::absolute(root).with_context(|| format!("resolving {}", root.display()))?;
    for (name, split) in [("train", entries), ("test", test)] {
        let split = DatasetManifest::new(&dir, split.into_iter().map(|e| absolute_entry(e, &root)).collect());
        split.write_as(&ctx.art.split(name))?;
        info!("{name} split: {} records", split.len());
    }
    Ok(())
}

/// Rewrites entry paths relative to `root` as absolute paths so the split
/// manifests can live outside the dataset root.
fn absolute_entry(mut e: ManifestEntry, root: &Path) -> ManifestEntry {
    let abs = |p: &mut std::path::PathBuf| *p = root.join(&*p);
    abs(&mut e.motion);
    abs(&mut e.root_trajectory);
    for p in [&mut e.text, &mut e.audio, &mut e.trajectory, &mut e.quality].into_iter().flatten() {
        abs(p);
    }
    e
}
