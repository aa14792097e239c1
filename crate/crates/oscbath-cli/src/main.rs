mod commands;
mod config;
mod exit;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::{Command, Context};
use crate::config::{RunConfig, DEFAULT_SEED};
use crate::exit::CliError;
use crate::output::{config_hash, Run};

/// Numerics for an oscillator coupled to a thermal Bose field.
#[derive(Debug, Parser)]
#[command(name = "oscbath", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent. Metadata goes to `<out>.meta.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps and quadrature.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Grid doublings for a convergence study.
    #[arg(long, global = true, default_value_t = 0)]
    refine: u32,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSCBATH_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oscbath: {e}");
            e.code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = cli.out.clone().or_else(|| cfg.out.clone());

    let inputs = cli.command.inputs(&cfg);
    let mut contents = vec![];
    for p in &inputs {
        contents.push(fs::read(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?);
    }
    let cfg_json = serde_json::to_vec(&cfg)?;
    let cmd_json = serde_json::to_vec(&cli.command)?;
    let extra = serde_json::to_vec(&(seed, cli.refine))?;
    let mut parts: Vec<&[u8]> = vec![&cfg_json, &cmd_json, &extra];
    parts.extend(contents.iter().map(|c| c.as_slice()));
    let hash = config_hash(&parts);

    let run = Run::new(cli.command.name(), hash, seed, cfg.grid, out);
    commands::run(
        &cli.command,
        Context {
            cfg,
            seed,
            refine: cli.refine,
            run,
        },
    )
}
