mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{AnalyzeArgs, PirBenchArgs, ResolveArgs, SimulateArgs};
use crate::config::{CommonArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ppdns", version, about = "Range-query name resolution toolkit")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a names file into a store snapshot.
    Build,
    /// Resolve one name through a simulated ring.
    Resolve(ResolveArgs),
    /// Replay a workload and report overlay metrics.
    Simulate(SimulateArgs),
    /// Time the cPIR phases and report message sizes.
    PirBench(PirBenchArgs),
    /// Report adversary advantages for a query model.
    Analyze(AnalyzeArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = RunConfig::load(&cli.common).and_then(|config| match cli.command {
        Command::Build => commands::build(&config),
        Command::Resolve(args) => commands::resolve(&config, &args),
        Command::Simulate(args) => commands::simulate(&config, &args),
        Command::PirBench(args) => commands::pir_bench(&config, &args),
        Command::Analyze(args) => commands::analyze(&config, &args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ppdns: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
