use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pilotwave_cli::{execute, Command, RunOptions};

#[derive(Parser)]
#[command(name = "pilotwave", version, about = "Stochastic pilot-wave laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the field identities, clock formula and Bohm-Newton consistency.
    Verify(Common),
    /// Run an equivariance ensemble.
    Simulate(Common),
    /// Run a relaxation ensemble.
    Relax(Common),
    /// Check the Fokker-Planck grid and compare it with the ensemble.
    Fpcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed overriding the scenario's run and probe seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Make measured-only checks fail the run.
    #[arg(long)]
    strict: bool,
}

fn main() {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Relax(a) => (Command::Relax, a),
        Cmd::Fpcheck(a) => (Command::Fpcheck, a),
    };
    let opts = RunOptions {
        config: args.config,
        seed: args.seed,
        out: args.out,
        strict: args.strict,
    };
    std::process::exit(execute(command, &opts));
}
