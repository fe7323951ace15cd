mod args;
mod commands;
mod error;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

/// Global state shared by every subcommand.
pub struct Ctx {
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub validate_only: bool,
}

fn dispatch(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Schema("--threads must be at least 1".into()));
    }
    let ctx = Ctx {
        argv,
        seed: cli.seed,
        threads: cli.threads,
        validate_only: cli.validate_config,
    };
    match cli.command {
        Command::Synth(a) => commands::synth::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
        Command::Posthoc(a) => commands::posthoc::run(&ctx, a),
        Command::Bilevel(a) => commands::bilevel::run(&ctx, a),
        Command::GmmSweep(a) => commands::gmm::run(&ctx, a),
        Command::Rerun(a) => rerun(&a.manifest),
    }
}

/// Replay the argv recorded in a manifest and check every output hash.
fn rerun(path: &std::path::Path) -> CliResult<()> {
    let m = manifest::read_manifest(path)?;
    let cli = Cli::try_parse_from(std::iter::once("cap".to_string()).chain(m.argv.iter().cloned()))
        .map_err(|e| CliError::Schema(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(CliError::Schema("a manifest cannot record a rerun".into()));
    }
    let inputs = manifest::changed(&m.inputs)?;
    if !inputs.is_empty() {
        return Err(CliError::Replay(format!("inputs changed: {}", inputs.join(", "))));
    }
    dispatch(cli, m.argv.clone())?;
    let changed = manifest::changed(&m.outputs)?;
    if !changed.is_empty() {
        return Err(CliError::Replay(changed.join(", ")));
    }
    eprintln!("reproduced {} output(s)", m.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match dispatch(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
