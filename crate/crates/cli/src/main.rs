//! `nocplace`: count, analyze, optimize and simulate core/cache/memory-controller
//! placements on a mesh network-on-chip.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A problem with the command line or its input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use noc_placement::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidGrid { .. }
            | E::OutOfBounds { .. }
            | E::Incomplete { .. }
            | E::Infeasible(_)
            | E::Parse(_)
            | E::InvalidTraffic(_)
            | E::DimensionMismatch { .. }
            | E::InvalidConfig(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Count(a) => commands::count(a, &cli.common),
        Command::Place(a) => commands::place(a, &cli.common),
        Command::Analyze(a) => commands::analyze(a, &cli.common),
        Command::Optimize(a) => commands::optimize(a, &cli.common),
        Command::Simulate(a) => commands::simulate(a, &cli.common),
        Command::Sweep(a) => commands::sweep(a, &cli.common),
        Command::Compare(a) => commands::compare(a, &cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
