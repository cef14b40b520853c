//! `pointalign`: generate synthetic paired scenes, train, evaluate, ablate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointalign::align::ContrastiveMode;
use pointalign::parallel::Execution;
use pointalign::train::TrainMode;
use pointalign::Error;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(
    name = "pointalign",
    version,
    about = "Zero-shot point cloud segmentation lab"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML experiment config with [data], [train], [output], [ablation].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long = "loss-mode", global = true, value_enum)]
    loss_mode: Option<LossModeArg>,
    #[arg(long = "no-class-loss", global = true)]
    no_class_loss: bool,
    #[arg(long = "no-patch-loss", global = true)]
    no_patch_loss: bool,
    /// Run every per-scene loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    ZeroShot,
    AnnotationFree,
    SeenOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossModeArg {
    Standard,
    PaperLiteral,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to `<out>`.
    GenData,
    /// Train both stages; writes checkpoints, metrics.csv and summary.json.
    Train(commands::TrainArgs),
    /// Print the metrics table for one or more checkpoints.
    Eval(commands::EvalArgs),
    /// First-stage runs over the loss-component grid and several seeds.
    Ablate(commands::AblateArgs),
}

impl GlobalArgs {
    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// Config file (or defaults) with the command-line overrides applied.
    pub fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(m) = self.mode {
            cfg.train.mode = match m {
                ModeArg::ZeroShot => TrainMode::ZeroShot,
                ModeArg::AnnotationFree => TrainMode::AnnotationFree,
                ModeArg::SeenOnly => TrainMode::SeenOnly,
            };
        }
        if let Some(m) = self.loss_mode {
            cfg.train.mcfa.mode = match m {
                LossModeArg::Standard => ContrastiveMode::Standard,
                LossModeArg::PaperLiteral => ContrastiveMode::PaperLiteral,
            };
        }
        if self.no_class_loss {
            cfg.train.mcfa.class_loss = false;
        }
        if self.no_patch_loss {
            cfg.train.mcfa.patch_loss = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Catalog(_) => 2,
        Error::Io(_)
        | Error::Format { .. }
        | Error::Pairing { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Corruption { .. }
        | Error::EmptyDataset
        | Error::Generation(_)
        | Error::Camera(_)
        | Error::Capacity(_) => 3,
        Error::NumericFailure(_) | Error::Evaluation { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData => commands::gen_data(&cli.global),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Eval(a) => commands::eval(&cli.global, a),
        Command::Ablate(a) => commands::ablate(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
