use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cvsn_cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "cvsn", version, about = "Probabilistic system-imbalance forecasting with C-VSN ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write a synthetic imbalance table and its schema.
    Generate,
    /// Train a single model.
    Train,
    /// Train the diversity ensemble and write its manifest.
    TrainEnsemble,
    /// Fine-tune a checkpoint on features with a short history.
    Finetune,
    /// Write quantile forecasts for a split.
    Predict,
    /// Score forecasts (overall, high-|SI|, per lead minute, calibration).
    Evaluate,
    /// Retrain without a component and report the metric changes.
    Ablate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Generate => Command::Generate,
            Cmd::Train => Command::Train,
            Cmd::TrainEnsemble => Command::TrainEnsemble,
            Cmd::Finetune => Command::Finetune,
            Cmd::Predict => Command::Predict,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Ablate => Command::Ablate,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides, |k| std::env::var(k).ok()).and_then(|cfg| {
        if cli.dry_run {
            return Ok(cfg.to_toml());
        }
        run(cli.command.into(), &cfg)
    });
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
