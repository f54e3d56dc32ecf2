use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use memctrl::config::{load_config, RunConfig};
use memctrl::experiments::{exit_code, run, RunOptions, Subcommand, PAPER_DEMO_PRESET};
use memctrl::{Error, Result};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    /// Build the resolvent family and report its identity residuals.
    Resolvent,
    /// Assemble the Gramian blocks and print the positivity report.
    Gramian,
    /// Probe ‖x_α(y)‖ as α decreases.
    Limit,
    /// Single regularised steering run at one α.
    Steer,
    /// Full α-sweep controllability experiment.
    Sweep,
    /// The worked heat-equation example end to end (uses the bundled preset by default).
    PaperDemo,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Resolvent => Subcommand::Resolvent,
            Command::Gramian => Subcommand::Gramian,
            Command::Limit => Subcommand::Limit,
            Command::Steer => Subcommand::Steer,
            Command::Sweep => Subcommand::Sweep,
            Command::PaperDemo => Subcommand::PaperDemo,
        }
    }
}

/// Approximate controllability experiments for impulsive neutral integro-differential
/// equations with fading memory.
#[derive(Debug, Parser)]
#[command(name = "memctrl", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Regularisation parameter for `steer`, or a single-α `sweep`/`limit`.
    #[arg(long)]
    alpha: Option<f64>,

    /// Seed recorded in the output metadata.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(args: &Args) -> Result<()> {
    let config = match (&args.config, args.command) {
        (Some(path), _) => load_config(path)?,
        (None, Command::PaperDemo) => RunConfig::from_toml(PAPER_DEMO_PRESET)?,
        (None, _) => return Err(Error::Config("--config <path> is required".into())),
    };
    let opts = RunOptions {
        out: args.out.clone(),
        alpha: args.alpha,
        seed: args.seed,
    };
    run(args.command.into(), &config, &opts, &mut io::stdout())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = execute(&args);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
