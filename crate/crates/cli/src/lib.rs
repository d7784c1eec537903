//! Batch front end for `bridge-mixed`: configuration, subcommands and run
//! metadata.

pub mod commands;
pub mod config;
pub mod error;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Simulate a panel with known parameters.
    Simulate,
    /// Sample the posterior of one model.
    Fit,
    /// Conditional and marginal parameter tables for one fit.
    Summarize,
    /// WAIC and LPML across fits.
    Compare,
    /// Posterior predictive discrepancy tables.
    Ppc,
    /// Follow-up pattern counts of a panel.
    Patterns,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Summarize => "summarize",
            Command::Compare => "compare",
            Command::Ppc => "ppc",
            Command::Patterns => "patterns",
        }
    }
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config_sha256: String,
    threads: usize,
    started_unix_seconds: u64,
    wall_seconds: f64,
    artifacts: &'a [String],
}

/// Runs a command, writes `<command>.metadata.json` into the output directory
/// and returns the text for stdout.
pub fn run(command: Command, cfg: &RunConfig) -> Result<String> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.threads {
            if n == 0 {
                return Err(CliError::config("threads must be at least 1"));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError {
            category: "runtime",
            message: e.to_string(),
        })?
    };
    let out = cfg.output.dir.as_path();
    let (text, artifacts) = pool.install(|| match command {
        Command::Simulate => commands::simulate(cfg, out),
        Command::Fit => commands::fit(cfg, out),
        Command::Summarize => commands::summarize_fit(cfg, out),
        Command::Compare => commands::compare(cfg, out),
        Command::Ppc => commands::ppc_tables(cfg, out),
        Command::Patterns => commands::patterns(cfg, out),
    })?;
    let seed = match command {
        Command::Simulate => Some(cfg.simulate.seed),
        Command::Fit => Some(cfg.sampler.seed),
        Command::Ppc => Some(cfg.ppc.seed),
        _ => cfg.seed,
    };
    let meta = Metadata {
        command: command.as_str(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: cfg.hash(),
        threads: pool.current_num_threads(),
        started_unix_seconds: started,
        wall_seconds: clock.elapsed().as_secs_f64(),
        artifacts: &artifacts,
    };
    write_metadata(&out.join(format!("{}.metadata.json", command.as_str())), &meta)?;
    Ok(text)
}

fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
