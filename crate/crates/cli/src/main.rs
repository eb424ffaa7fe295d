use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedalu_cli::{cmd_run, cmd_sweep, cmd_validate, CmdFailure};

#[derive(Parser)]
#[command(
    name = "fedalu",
    version,
    about = "Deterministic federated distillation simulator with accumulating local updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv and summary.csv
    Run {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for output CSVs (created if missing)
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-run the experiment for each accumulation period in --s-list
    Sweep {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated accumulation periods, e.g. 1,3,5,10
        #[arg(long)]
        s_list: String,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for output CSVs (created if missing)
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a config file and print the fully defaulted effective config
    Validate {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CmdFailure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
        } => cmd_run(&config, seed, &out_dir),
        Command::Sweep {
            config,
            s_list,
            seed,
            out_dir,
        } => cmd_sweep(&config, &s_list, seed, &out_dir),
        Command::Validate { config } => {
            let lines = cmd_validate(&config)?;
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            for msg in failure.messages() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
