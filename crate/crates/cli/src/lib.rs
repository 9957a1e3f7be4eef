//! Configuration, checkpoints and subcommands of the `sslse` pipeline.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use commands::{cmd_ablate, cmd_encode, cmd_finetune, cmd_pretrain, cmd_synth, cmd_transfer, Outcome};
pub use config::{Overrides, RunConfig, SCHEMA_VERSION};
pub use error::{CliError, Result};
pub use run::{init_logging, RunDir};
