//! Command-line runner: `run` executes a scenario and writes the output
//! files; `validate` checks a scenario file without running it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use honeyfarm::scenario::load_scenario;
use honeyfarm::sim::run_scenario;

#[derive(Parser)]
#[command(name = "honeyfarm", version, about = "Deterministic double-honeypot worm collection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; writes run.log, collections.jsonl, report.txt, and
    /// report.machine under the output directory.
    Run {
        scenario_file: PathBuf,
        /// Seed for the run, overriding the scenario file.
        #[arg(long)]
        seed: u64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Tick horizon override.
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Report rendering printed to stdout.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Parse and validate a scenario file.
    Validate { scenario_file: PathBuf },
}

fn run(cli: Cli) -> honeyfarm::Result<()> {
    match cli.command {
        Command::Run {
            scenario_file,
            seed,
            out,
            max_ticks,
            format,
        } => {
            let mut config = load_scenario(&scenario_file)?;
            config.seed = seed;
            if let Some(ticks) = max_ticks {
                config.max_ticks = ticks;
                config.validate()?;
            }
            let report = run_scenario(&config, &out)?;
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Machine => print!("{}", report.to_machine()),
            }
            Ok(())
        }
        Command::Validate { scenario_file } => {
            load_scenario(&scenario_file)?;
            println!("ok: {}", scenario_file.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
