use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use envyprice_cli::commands::write_error;
use envyprice_cli::{dispatch, Overrides, Verb};

#[derive(Parser)]
#[command(name = "envyprice", version, about = "Envy-free pricing experiments from scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's algorithm and write report.json
    Run(Flags),
    /// Compare the algorithm against the brute-force revenue oracle
    Compare(Flags),
    /// Sweep k or the ladder rung j and write sweep.csv
    Sweep(Flags),
    /// Lint the instance and certify MHR demand and convex costs
    Validate(Flags),
}

#[derive(clap::Args)]
struct Flags {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Envy and KKT verification tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    oracle_step: Option<f64>,
    /// Replaces the generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write the ascent event log to trace.ndjson
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (verb, flags) = match cli.command {
        Command::Run(f) => (Verb::Run, f),
        Command::Compare(f) => (Verb::Compare, f),
        Command::Sweep(f) => (Verb::Sweep, f),
        Command::Validate(f) => (Verb::Validate, f),
    };
    let overrides = Overrides { out: flags.out, tol: flags.tol, oracle_step: flags.oracle_step, seed: flags.seed, trace: flags.trace };
    match dispatch(verb, &flags.scenario, &overrides) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err((err, dir)) => {
            if let Some(dir) = dir {
                write_error(&dir, &err);
            }
            eprintln!("{}", serde_json::to_string(&err.record()).expect("error records serialize"));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
