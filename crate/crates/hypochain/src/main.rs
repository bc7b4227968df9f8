use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hypochain::{run_file, Overrides, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Validate,
    Limits,
    Simulate,
    TaylorCheck,
    Density,
    Tails,
    Converge,
    Derivatives,
    DiagonalDecay,
    Price,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Validate => Subcommand::Validate,
            Command::Limits => Subcommand::Limits,
            Command::Simulate => Subcommand::Simulate,
            Command::TaylorCheck => Subcommand::TaylorCheck,
            Command::Density => Subcommand::Density,
            Command::Tails => Subcommand::Tails,
            Command::Converge => Subcommand::Converge,
            Command::Derivatives => Subcommand::Derivatives,
            Command::DiagonalDecay => Subcommand::DiagonalDecay,
            Command::Price => Subcommand::Price,
        }
    }
}

/// Short-time experiments on chained hypoelliptic SDEs.
#[derive(Debug, Parser)]
#[command(name = "hypochain", version = env!("HYPOCHAIN_VERSION"))]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        workers: cli.workers,
        out: cli.out,
    };
    let cmd = Subcommand::from(cli.command);
    match run_file(cmd, &cli.config, &overrides) {
        Ok(outcome) => {
            for c in &outcome.report.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                let tag = if c.assertion { "" } else { " (report)" };
                println!("{status} {}{tag}: {}", c.name, c.detail);
            }
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
