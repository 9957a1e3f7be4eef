use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sslse_cli::{
    cmd_ablate, cmd_encode, cmd_finetune, cmd_pretrain, cmd_synth, cmd_transfer, init_logging, CliError, Outcome,
    Overrides, RunConfig,
};

/// EEG-as-image contrastive pretraining with squeeze-and-excitation
/// encoders.
#[derive(Parser)]
#[command(name = "sslse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled recording (EDF + labels).
    Synth(Common),
    /// Encode recording windows into image files and a manifest.
    Encode(Common),
    /// Contrastive pretraining; writes a checkpoint and the loss history.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Train a classifier head on a labeled budget and report metrics.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained encoder; a fresh seeded init is used without it.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the SE × pretraining ablation grid.
    Ablate(Common),
    /// Pretrain on --config's data, fine-tune on --target's.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Config of the fine-tuning corpus.
        #[arg(long, value_name = "PATH")]
        target: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent of the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Squeeze-and-excitation in every residual block.
    #[arg(long, value_enum)]
    se: Option<Switch>,
    /// Pretraining epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn load(&self, path: &std::path::Path) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(path)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            epochs: self.epochs,
            se_enabled: self.se.map(|s| matches!(s, Switch::On)),
        });
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SSLSE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::InvalidConfig(format!("SSLSE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::InvalidConfig(format!("cannot size the worker pool: {e}")))
}

fn execute(cli: Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(c) => cmd_synth(&c.load(&c.config)?, &c.out),
        Command::Encode(c) => cmd_encode(&c.load(&c.config)?, &c.out),
        Command::Pretrain { common: c, resume } => cmd_pretrain(&c.load(&c.config)?, &c.out, resume.as_deref()),
        Command::Finetune { common: c, checkpoint } => {
            cmd_finetune(&c.load(&c.config)?, &c.out, checkpoint.as_deref())
        }
        Command::Ablate(c) => cmd_ablate(&c.load(&c.config)?, &c.out),
        Command::Transfer { common: c, target } => cmd_transfer(&c.load(&c.config)?, &c.load(&target)?, &c.out),
    }
}

fn main() -> ExitCode {
    init_logging(log::LevelFilter::Info);
    match execute(Cli::parse()) {
        Ok(outcome) => {
            eprintln!("{}", outcome.summary.trim_end());
            eprintln!("run directory: {}", outcome.run_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "level": "error", "category": e.category(), "message": e.to_string() });
            println!("{line}");
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
