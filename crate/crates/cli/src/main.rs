//! Command-line front end: generate data, mine parts, train, evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmsm::trainer::Profile;

use commands::UsageError;
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "pmsm", version, about = "Part-based multi-stream vehicle search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for embedding extraction (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (images, manifest, ground truth).
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Mine the canonical part_m / part_i rectangles.
    Mine {
        #[command(flatten)]
        common: Common,
    },
    /// Train the multi-stream embedding.
    Train {
        #[command(flatten)]
        common: Common,
        /// Parts file (default: <out>/parts.json).
        #[arg(long)]
        parts: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on retrieval and re-identification splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint (default: <out>/train/checkpoint.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        parts: Option<PathBuf>,
        /// Evaluate even if the checkpoint architecture differs from the config.
        #[arg(long)]
        force: bool,
    },
    /// synth, mine, train and eval in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Reuse the checkpoint already in the output directory.
        #[arg(long)]
        skip_train: bool,
        #[arg(long)]
        force: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Mine { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Pipeline { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        profile: common.profile.map(|p| match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }),
    };
    RunConfig::resolve(common.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.command.common();
    let cfg = resolve(common).map_err(|e| UsageError(format!("{e:#}")))?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match &cli.command {
        Command::Synth { .. } => {
            commands::cmd_synth(&cfg)?;
        }
        Command::Mine { .. } => {
            commands::cmd_mine(&cfg)?;
        }
        Command::Train { parts, .. } => {
            commands::cmd_train(&cfg, &parts.clone().unwrap_or_else(|| cfg.parts_path()))?;
        }
        Command::Eval {
            checkpoint,
            parts,
            force,
            ..
        } => {
            commands::cmd_eval(
                &cfg,
                &checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path()),
                &parts.clone().unwrap_or_else(|| cfg.parts_path()),
                *force,
                threads,
            )?;
        }
        Command::Pipeline { skip_train, force, .. } => commands::cmd_pipeline(&cfg, *skip_train, *force, threads)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config_error = err.downcast_ref::<UsageError>().is_some()
        || matches!(
            err.downcast_ref::<pmsm::Error>(),
            Some(pmsm::Error::InvalidConfig(_))
        );
    if config_error {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
