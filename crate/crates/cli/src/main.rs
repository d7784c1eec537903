use std::path::PathBuf;
use std::process::ExitCode;

use bridge_mixed_cli::config::RunConfig;
use bridge_mixed_cli::error::CliError;
use bridge_mixed_cli::{run, Command};
use clap::{CommandFactory, FromArgMatches, Parser};

/// Bayesian cumulative-logit mixed models for three-level ordinal panels.
///
/// Every command reads an optional TOML configuration. Relative paths in the
/// file are resolved against the file's directory. Errors are reported on
/// stderr as a JSON object with a `category` and a `message`.
#[derive(Debug, Parser)]
#[command(name = "bridge-mixed", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    command: Command,

    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Seed for every random stream of the command.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let defaults = format!(
        "Default configuration (every key optional):\n\n{}",
        RunConfig::default().to_toml()
    );
    let matches = Cli::command()
        .after_help("Run with --help to list the default configuration.")
        .after_long_help(defaults)
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(dir) = &cli.output {
        cfg.output.dir = dir.clone();
    }
    run(cli.command, &cfg)
}
