//! `charpose`: synthesize data, train, roll out and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use charpose::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "charpose", version, about = "Joint action and characteristic 3D pose forecasting")]
pub struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file merged over the preset (train config, or synth spec).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base directory for relative dataset paths; overrides DATA_ROOT.
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    /// Named starting configuration.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Dotted-path override such as `weights.adv3d=0`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic puppet dataset.
    Synth(SynthArgs),
    /// Train the forecaster and critic.
    Train(TrainArgs),
    /// Roll a checkpoint out autoregressively over a split.
    Rollout(RolloutArgs),
    /// Score a rollout file and emit the report and per-step curve.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synth spec JSON; defaults to the preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Generator checkpoint; not needed with --ground-truth.
    #[arg(long, required_unless_present = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Horizon M; defaults to the trained config.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "rollouts.json")]
    pub out: PathBuf,
    /// Emit the ground truth as predictions.
    #[arg(long)]
    pub ground_truth: bool,
    /// History length for --ground-truth.
    #[arg(long, default_value_t = 3)]
    pub history: usize,
    /// `zero` or `resample`.
    #[arg(long, default_value = "resample")]
    pub noise: String,
    /// Sample fed-back actions at this temperature instead of argmax.
    #[arg(long)]
    pub temperature: Option<f32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rollouts: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Skip the real-vs-generated classifier.
    #[arg(long)]
    pub no_quality: bool,
}

/// 2 input, 3 version or contract, 4 numerical abort.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) | Error::LossUndefined(_) => 4,
        Error::Version(_) | Error::Contract(_) | Error::Shape { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
