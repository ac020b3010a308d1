//! `motiongen`: synthesize, curate, tokenize, train, generate and evaluate.

mod artifacts;
mod commands;
mod config;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use motiongen_core::maskgen::Strategy;

use commands::{Ctx, GenerateArgs};
use config::{Overrides, RunConfig, DATA_ROOT_ENV};
use lock::RunLock;

#[derive(Debug, Parser)]
#[command(name = "motiongen", version, about = "Motion tokenizer and multi-condition generator pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Dataset root; overrides the config.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset to the dataset root.
    Synth,
    /// Filter the dataset and split it into train and test manifests.
    Curate,
    /// Train the motion tokenizer on the train split.
    TrainTokenizer,
    /// Tokenize both splits with the trained tokenizer.
    Tokenize,
    /// Train the generator through the three curriculum stages.
    TrainGen,
    /// Generate one sequence from condition files.
    Generate(GenerateCli),
    /// Compute the metrics report on the test split.
    Evaluate,
    /// Compare decoding strategies on a generator trained for all of them.
    AblateDecoding,
    /// Run synth through evaluate.
    Pipeline,
    /// Print the resolved configuration.
    ShowConfig,
}

#[derive(Debug, Args)]
struct GenerateCli {
    /// Text condition file.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Audio condition file.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Trajectory condition file.
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Frames to generate, rounded down to whole tokens.
    #[arg(long)]
    frames: Option<usize>,
    /// Output file stem under `<output>/generate`.
    #[arg(long, default_value = "sample")]
    name: String,
    /// Decoding strategy: ar_flatten, mask_flatten or mask_parallel.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Sampling temperature; 0 decodes greedily
    #[arg(long)]
    temperature: Option<f64>,
    /// Decoding iterations for the masked strategies
    #[arg(long)]
    iterations: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::ALL
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| format!("unknown strategy {s:?}; expected ar_flatten, mask_flatten or mask_parallel"))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Curate => "curate",
            Command::TrainTokenizer => "train-tokenizer",
            Command::Tokenize => "tokenize",
            Command::TrainGen => "train-gen",
            Command::Generate(_) => "generate",
            Command::Evaluate => "evaluate",
            Command::AblateDecoding => "ablate-decoding",
            Command::Pipeline => "pipeline",
            Command::ShowConfig => "show-config",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.resolve(&Overrides {
        seed: cli.seed,
        output: cli.output,
        data_root: cli.data_root,
    })?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let _lock = RunLock::acquire(&cfg.output)?;
    let ctx = Ctx::new(cfg);
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Curate => commands::curate(&ctx),
        Command::TrainTokenizer => commands::train_tokenizer(&ctx),
        Command::Tokenize => commands::tokenize(&ctx),
        Command::TrainGen => commands::train_gen(&ctx),
        Command::Generate(g) => commands::generate(
            &ctx,
            &GenerateArgs {
                text: g.text,
                audio: g.audio,
                trajectory: g.traj,
                frames: g.frames,
                name: g.name,
                strategy: g.strategy,
                temperature: g.temperature,
                iterations: g.iterations,
            },
        ),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::AblateDecoding => commands::ablate_decoding(&ctx),
        Command::Pipeline => commands::pipeline(&ctx),
        Command::ShowConfig => unreachable!("handled before locking"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "status": "error",
                "command": command,
                "error": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
