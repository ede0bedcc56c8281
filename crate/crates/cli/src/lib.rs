//! `damage` command-line front end.
//!
//! Every subcommand takes `--<key> <value>` flags for the keys of its schema
//! (dotted for module hyperparameters, e.g. `--train.lr`) and an optional
//! `--config file.json`; flags override the file, which overrides defaults.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Command;
use thiserror::Error;

use config::{command, RunConfig, SUBCOMMANDS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Runtime(#[from] damage_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(damage_core::Error::Config(_)) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn cli() -> Command {
    let mut cmd = Command::new("damage")
        .about("Vehicle damage classification and localization pipeline")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        cmd = cmd.subcommand(command(sub));
    }
    cmd
}

/// Parse `argv` (program name first), run the subcommand, and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 2,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let (sub, sub_matches) = matches.subcommand().expect("subcommand is required");
    match RunConfig::resolve(sub, sub_matches).and_then(|cfg| dispatch(sub, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(sub: &str, cfg: &RunConfig) -> Result<(), CliError> {
    log::info!("{sub} config {}", cfg.to_compact_json());
    log::debug!("threads cap {}; work runs on one thread", cfg.usize("threads")?);
    match sub {
        "synth" => commands::synth(cfg),
        "augment" => commands::augment(cfg),
        "split" => commands::split(cfg),
        "train-cnn" => commands::train_cnn_cmd(cfg),
        "pretrain-cae" => commands::pretrain_cae(cfg),
        "finetune" => commands::finetune(cfg),
        "train-head" => commands::train_head_cmd(cfg),
        "ensemble" => commands::ensemble(cfg),
        "eval" => commands::eval(cfg),
        "localize" => commands::localize(cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}
