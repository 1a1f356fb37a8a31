mod args;
mod commands;
mod output;

use args::{merge_config, Cli, Command};
use branching_extremes::Error;
use clap::Parser;
use commands::{Context, Failure};
use std::process::ExitCode;

fn exit_status(f: &Failure) -> u8 {
    match f {
        Failure::Core(Error::InvalidArgument(_)) => 2,
        Failure::Core(Error::ResourceLimit { .. }) => 3,
        Failure::Core(Error::NumericalFailure(_)) => 4,
        Failure::Core(Error::RejectionBudget { .. }) => 5,
        Failure::Io(_) | Failure::ChecksFailed(_) => 1,
    }
}

fn main() -> ExitCode {
    let raw: Vec<_> = std::env::args_os().collect();
    let merged = merge_config(raw).unwrap_or_else(|e| e.exit());
    let cli = Cli::parse_from(merged);

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = branching_extremes::par::init_workers(n) {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(1);
        }
    }

    let ctx = Context {
        seed: cli.seed,
        output: cli.output.clone(),
    };
    let result = match &cli.command {
        Command::EstimateC(a) => commands::estimate_c_cmd(&ctx, a),
        Command::Kpp(a) => commands::kpp_cmd(&ctx, a),
        Command::Simulate(a) => commands::simulate_cmd(&ctx, a),
        Command::Decorate(a) => commands::decorate_cmd(&ctx, a),
        Command::LimitProcess(a) => commands::limit_process_cmd(&ctx, a),
        Command::Verify(a) => commands::verify_cmd(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {} failed: {e}", cli.command.name()),
                Failure::Io(e) => eprintln!("error: {e}"),
                Failure::ChecksFailed(names) => {
                    eprintln!("error: {} check(s) failed: {}", names.len(), names.join(", "))
                }
            }
            ExitCode::from(exit_status(&f))
        }
    }
}
