//! `mood`: generate toy offline datasets, train and evaluate agents, and
//! measure actor-objective estimators.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::Result;

#[derive(Parser)]
#[command(name = "mood", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every field has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set algo.beta=1.5`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Same-, cross- and mixed-objective datasets plus a manifest.
    GenData(Common),
    /// Train one agent per seed; writes metrics.csv and a checkpoint.
    Train(Common),
    /// Roll out trained agents with and without evaluation sampling.
    Eval(Common),
    /// Bias and variance of the actor-objective estimators.
    Analyze(Common),
    /// Tabulate every evaluation summary.
    Report(Common),
    /// Print the fully resolved configuration.
    Config(Common),
}

fn run(cli: Cli) -> Result<()> {
    let (common, cmd): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::GenData(c) => (c, commands::gen_data::run),
        Command::Train(c) => (c, commands::train::run),
        Command::Eval(c) => (c, commands::eval::run),
        Command::Analyze(c) => (c, commands::analyze::run),
        Command::Report(c) => (c, commands::report::run),
        Command::Config(c) => (c, |cfg| {
            print!("{}", toml::to_string(cfg).expect("config serializes"));
            Ok(())
        }),
    };
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
