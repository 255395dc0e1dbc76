mod cli;
mod commands;
mod config;
mod error;
mod manifest;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use commands::Ctx;
use error::Result;

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Canonicalize(_) => "canonicalize",
        Command::Train(_) => "train",
        Command::Sample(_) => "sample",
        Command::VerifyTheory(_) => "verify-theory",
        Command::Metrics(_) => "metrics",
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn run(cli: Cli) -> Result<bool> {
    let name = command_name(&cli.command);
    let config = cli.config.as_deref().map(|p| config::load(p, name)).transpose()?;
    let ctx = Ctx {
        out_dir: cli.out_dir,
        config,
    };
    match cli.command {
        Command::Canonicalize(a) => commands::canonicalize::run(a, &ctx).map(|()| true),
        Command::Train(a) => commands::train::run(a, &ctx).map(|()| true),
        Command::Sample(a) => commands::sample::run(a, &ctx).map(|()| true),
        Command::VerifyTheory(a) => commands::verify::run(a, &ctx),
        Command::Metrics(a) => commands::metrics::run(a, &ctx).map(|()| true),
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
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
