use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::info;
use motiongen_core::conditioning::{load_condition_features, ConditionSet, Modality};
use motiongen_core::curation::beat_alignment;
use motiongen_core::maskgen::{eval_masked_ce, generate as decode, train_generator, DecodeConfig, GenSample, Generator, Strategy};
use motiongen_core::metrics::{
    diversity, fid, mm_dist, r_precision, train_feature_extractor_from_manifest, trajectory_errors, GaussianSummary,
    MetricsReport,
};
use motiongen_core::motion::{write_motion, DatasetManifest, MotionSequence};
use motiongen_core::rfsq::write_tokens;
use motiongen_core::tokenizer::{eval_reconstruction, TokenizerModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Ctx;
use crate::artifacts::{crop_motion, root_path, write, S};

/// Masks drawn per held-out sample for the masked cross-entropy.
const CE_DRAWS: usize = 4;
/// Retrieval ranks reported.
const R_PRECISION_KS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Default)]
pub struct GenerateArgs {
    pub text: Option<PathBuf>,
    pub audio: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    /// Frames to generate; defaults to the trajectory length or the model
    /// maximum.
    pub frames: Option<usize>,
    pub name: String,
    pub strategy: Option<Strategy>,
    pub temperature: Option<f64>,
    pub iterations: Option<usize>,
}

impl Ctx {
    fn decode_config(&self, args: &GenerateArgs) -> DecodeConfig {
        let mut d = self.cfg.decode.clone();
        if let Some(s) = args.strategy {
            d.strategy = s;
        }
        if let Some(t) = args.temperature {
            d.temperature = t;
        }
        if let Some(i) = args.iterations {
            d.iterations = i;
        }
        d
    }
}

/// Decodes one sequence from any combination of condition files.
pub fn generate(ctx: &Ctx, args: &GenerateArgs) -> Result<()> {
    let tok = ctx.art.load_tokenizer()?;
    let model = ctx.art.load_generator()?;
    let gc = model.config();
    let load = |p: &Option<PathBuf>, m: Modality, width: usize| -> Result<_> {
        p.as_deref()
            .map(|p| load_condition_features::<S>(p, m, Some(width)).with_context(|| format!("{} condition", m.as_str())))
            .transpose()
    };
    let conds = ConditionSet {
        text: load(&args.text, Modality::Text, gc.text_width)?,
        audio: load(&args.audio, Modality::Audio, gc.audio_width)?,
        trajectory: load(&args.trajectory, Modality::Trajectory, 3)?,
    };
    let ds = gc.downsample;
    let frames = args
        .frames
        .or_else(|| conds.trajectory.as_ref().map(|t| t.rows()))
        .unwrap_or(gc.max_len * ds)
        .min(gc.max_len * ds);
    let length = frames / ds;
    if length == 0 {
        bail!("--frames must be at least {ds}");
    }
    let conds = conds.crop_frames(length * ds)?;
    let cfg = ctx.decode_config(args);
    let dir = ctx.art.stage_dir("generate", &ctx.cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.stage_seed("generate"));
    let (grid, stats) = decode(&model, &conds, length, &cfg, &mut rng)?;
    let motion = tok.detokenize(&grid, ctx.cfg.dataset.fps as S)?;
    write_tokens(&dir.join(format!("{}.tokens", args.name)), &grid, tok.rfsq())?;
    write_motion(&motion, &dir.join(format!("{}.motion", args.name)))?;
    let target: Option<Vec<[f64; 3]>> = conds.trajectory.as_ref().map(|t| {
        (0..t.rows()).map(|r| std::array::from_fn(|k| f64::from(t.get(r, k)))).collect()
    });
    write(&dir.join(format!("{}.root.tsv", args.name)), root_tsv(&root_path(&motion), target.as_deref()))?;
    info!(
        "generated {} frames with {} in {} backbone passes",
        motion.frames(),
        cfg.strategy.as_str(),
        stats.backbone_passes
    );
    Ok(())
}

/// Frame-by-frame root positions, optionally beside a target path.
fn root_tsv(generated: &[[f64; 3]], target: Option<&[[f64; 3]]>) -> String {
    let mut out = String::from("frame\tx\ty\tz");
    if target.is_some() {
        out.push_str("\ttarget_x\ttarget_y\ttarget_z");
    }
    out.push('\n');
    for (i, p) in generated.iter().enumerate() {
        let _ = write!(out, "{i}\t{}\t{}\t{}", fmt(p[0]), fmt(p[1]), fmt(p[2]));
        if let Some(q) = target.and_then(|t| t.get(i)) {
            let _ = write!(out, "\t{}\t{}\t{}", fmt(q[0]), fmt(q[1]), fmt(q[2]));
        }
        out.push('\n');
    }
    out
}

fn fmt(x: f64) -> String {
    motiongen_core::motion::io::fmt_num(x)
}

/// One held-out sequence prepared for evaluation.
struct Case {
    id: String,
    motion: MotionSequence<S>,
    sample: GenSample<S>,
    beats: Option<Vec<f64>>,
}

fn load_cases(ctx: &Ctx, tok: &TokenizerModel<S>, manifest: &DatasetManifest, max_len: usize) -> Result<Vec<Case>> {
    let ds = tok.config().downsample;
    let samples = ctx.art.load_samples(manifest, tok, max_len)?;
    let mut cases = Vec::new();
    for (e, sample) in manifest.entries.iter().zip(samples) {
        let motion = crop_motion(&manifest.load_motion::<S>(e)?, ds, sample.tokens.length() * ds)?;
        cases.push(Case {
            id: e.id.clone(),
            motion,
            sample,
            beats: e.has_audio().then(|| e.beat_times.clone()),
        });
    }
    let n = ctx.cfg.metrics.eval_count;
    if n > 0 {
        cases.truncate(n);
    }
    Ok(cases)
}

fn decode_case(
    model: &Generator<S>,
    tok: &TokenizerModel<S>,
    case: &Case,
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(MotionSequence<S>, motiongen_core::rfsq::TokenGrid, usize)> {
    let (grid, stats) = decode(model, &case.sample.conditions, case.sample.tokens.length(), cfg, rng)?;
    let motion = tok.detokenize(&grid, case.motion.fps())?;
    Ok((motion, grid, stats.backbone_passes))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Computes the metrics report on the test split.
pub fn evaluate(ctx: &Ctx) -> Result<()> {
    let tok = ctx.art.load_tokenizer()?;
    let model = ctx.art.load_generator()?;
    let train = ctx.art.load_split("train")?;
    let test = ctx.art.load_split("test")?;
    let cases = load_cases(ctx, &tok, &test, model.config().max_len)?;
    if cases.len() < 2 {
        bail!(
            "evaluation needs at least 2 test sequences, got {}; raise dataset.test_fraction, dataset.sequence_count or metrics.eval_count",
            cases.len()
        );
    }
    let dir = ctx.art.stage_dir("evaluate", &ctx.cfg)?;
    let mc = &ctx.cfg.metrics;

    info!("training the evaluation feature extractor");
    let (fx, _) =
        train_feature_extractor_from_manifest::<S>(&train, mc.extractor.clone(), ctx.cfg.stage_seed("extractor"))?;
    fx.save(&dir.join("extractor.ckpt"))?;

    let traj_dir = dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir).with_context(|| format!("creating {}", traj_dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.stage_seed("evaluate"));
    let (mut real_f, mut gen_f, mut text_f) = (Vec::new(), Vec::new(), Vec::new());
    let (mut gen_roots, mut real_roots) = (Vec::new(), Vec::new());
    let (mut gen_bas, mut real_bas) = (Vec::new(), Vec::new());
    let sigma = ctx.cfg.curation.bas_sigma_frames;
    info!("generating {} held-out sequences", cases.len());
    for case in &cases {
        let (motion, _, _) = decode_case(&model, &tok, case, &ctx.cfg.decode, &mut rng)?;
        real_f.push(fx.encode_motion(&case.motion)?);
        gen_f.push(fx.encode_motion(&motion)?);
        if let Some(t) = &case.sample.conditions.text {
            text_f.push(fx.encode_text(t)?);
        }
        let (g, r) = (root_path(&motion), root_path(&case.motion));
        write(&traj_dir.join(format!("{}.tsv", case.id)), root_tsv(&g, Some(&r)))?;
        gen_roots.push(g);
        real_roots.push(r);
        if let Some(beats) = &case.beats {
            gen_bas.push(beat_alignment(&motion, beats, sigma)?.bas);
            real_bas.push(beat_alignment(&case.motion, beats, sigma)?.bas);
        }
    }

    let mut report = MetricsReport::new(Some(fx.version()), ctx.cfg.seed);
    let motions: Vec<_> = cases.iter().map(|c| c.motion.clone()).collect();
    report.push("recon_mpjpe_mm", eval_reconstruction(&tok, &motions)?.mean_mpjpe_mm);
    let real_g = GaussianSummary::fit(&real_f)?;
    report.push("fid", fid(&real_g, &GaussianSummary::fit(&gen_f)?)?);
    report.push("diversity_real", diversity(&real_f, mc.diversity_pairs, &mut rng)?);
    report.push("diversity", diversity(&gen_f, mc.diversity_pairs, &mut rng)?);
    if text_f.len() == cases.len() {
        report.push("mm_dist", mm_dist(&gen_f, &text_f)?);
        let pool = mc.r_precision_pool.min(cases.len());
        for (name, feats) in [("r_precision_real", &real_f), ("r_precision", &gen_f)] {
            let hits = r_precision(feats, &text_f, &R_PRECISION_KS, pool, &mut rng)?;
            for (k, h) in R_PRECISION_KS.iter().zip(hits) {
                report.push(format!("{name}_top{k}"), h);
            }
        }
    }
    let samples: Vec<_> = cases.iter().map(|c| c.sample.clone()).collect();
    report.push(
        "masked_ce",
        eval_masked_ce(&model, &samples, CE_DRAWS, ctx.cfg.stage_seed("masked_ce"))?,
    );
    let te = trajectory_errors(&gen_roots, &real_roots, mc.trajectory_threshold)?;
    report.push("traj_err_pct", te.traj_err_pct);
    report.push("loc_err_pct", te.loc_err_pct);
    report.push("avg_err_cm", te.avg_err_cm);
    if !gen_bas.is_empty() {
        report.push("bas", mean(&gen_bas));
        report.push("bas_real", mean(&real_bas));
    }
    report.write(&dir.join("metrics.tsv"))?;
    for r in &report.rows {
        info!("{} = {:.4}", r.name, r.value);
    }
    Ok(())
}

/// Trains once on every objective, then decodes the test split with each
/// strategy and tabulates cost and fidelity.
pub fn ablate_decoding(ctx: &Ctx) -> Result<()> {
    let tok = ctx.art.load_tokenizer()?;
    let train = ctx.art.load_split("train")?;
    let test = ctx.art.load_split("test")?;
    let mut gc = ctx.cfg.generator.clone();
    gc.train.objectives = Strategy::ALL.to_vec();
    let samples = ctx.art.load_samples(&train, &tok, gc.max_len)?;
    let cases = load_cases(ctx, &tok, &test, gc.max_len)?;
    let dir = ctx.art.stage_dir("ablate", &ctx.cfg)?;
    info!("training generator on all objectives");
    let (model, _) = train_generator::<S>(
        &samples,
        &gc,
        &ctx.cfg.curriculum,
        ctx.cfg.stage_seed("ablate"),
        Some(&dir.join("generator.ckpt")),
    )?;
    let mut table = String::from("strategy\tbackbone_passes\tpasses_per_sequence\ttoken_accuracy\tavg_err_cm\n");
    for strategy in Strategy::ALL {
        let cfg = DecodeConfig {
            strategy,
            ..ctx.cfg.decode.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.stage_seed("ablate-decode"));
        let (mut passes, mut acc, mut gen_roots, mut real_roots) = (0, Vec::new(), Vec::new(), Vec::new());
        for case in &cases {
            let (motion, grid, p) = decode_case(&model, &tok, case, &cfg, &mut rng)?;
            passes += p;
            acc.push(grid.accuracy(&case.sample.tokens));
            gen_roots.push(root_path(&motion));
            real_roots.push(root_path(&case.motion));
        }
        let te = trajectory_errors(&gen_roots, &real_roots, ctx.cfg.metrics.trajectory_threshold)?;
        let _ = writeln!(
            table,
            "{}\t{passes}\t{}\t{}\t{}",
            strategy.as_str(),
            fmt(passes as f64 / cases.len() as f64),
            fmt(mean(&acc)),
            fmt(te.avg_err_cm)
        );
        info!("{}: {passes} backbone passes", strategy.as_str());
    }
    write(&dir.join("ablation.tsv"), table)
}
