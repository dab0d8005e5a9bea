//! `casande-lab`: generate synthetic patients, train and evaluate inquiry
//! agents, and talk to them from the console.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.

mod answer;
mod args;
mod commands;
mod config;
mod error;
mod manifest;
mod repl;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use crate::args::{resolve, Cli, Command};
use crate::commands::{execute, Console, Invocation};
use crate::config::FileConfig;
use crate::error::{data, CliResult};
use crate::manifest::{unix_now, FileDigest, RunManifest, MANIFEST_FILE};

fn run_invocation(inv: Invocation, config_file: Option<std::path::PathBuf>) -> CliResult<()> {
    let started_at = unix_now();
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut output = std::io::stdout();
    let outcome = execute(
        &inv,
        Console {
            input: &mut input,
            output: &mut output,
        },
    )?;
    output.flush().map_err(data)?;
    let digests = |paths: &[std::path::PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<CliResult<Vec<_>>>();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: digests(&outcome.inputs)?,
        outputs: digests(&outcome.outputs)?,
        invocation: outcome.recorded.unwrap_or(inv),
        config_file,
        started_at,
        finished_at: unix_now(),
    };
    manifest.save(&manifest.invocation.out_dir().join(MANIFEST_FILE))
}

fn rerun(args: &args::RerunArgs) -> CliResult<()> {
    let old = RunManifest::load(&args.manifest)?;
    for input in &old.inputs {
        match FileDigest::of(&input.path) {
            Ok(now) if now.sha256 == input.sha256 => {}
            Ok(_) => eprintln!("warning: {} changed since the recorded run", input.path.display()),
            Err(e) => return Err(e),
        }
    }
    let mut inv = old.invocation;
    if let Some(out) = &args.out {
        inv.set_out_dir(out.clone());
    }
    run_invocation(inv, old.config_file)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Rerun(args) = &cli.command {
        return rerun(args);
    }
    let file = FileConfig::load_optional(cli.config.as_deref())?;
    let inv = resolve(&cli.command, &file)?.expect("every other command resolves");
    run_invocation(inv, cli.config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("casande-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
