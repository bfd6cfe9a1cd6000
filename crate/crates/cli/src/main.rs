use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mnl_cli::{prepare, run, ConfigError, RunError, VERSION};

#[derive(Parser)]
#[command(name = "mnl", about = "Measurement-driven Langevin scenarios", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Replace an existing entry, e.g. `ensemble.seed=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; overrides `outputs.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the version.
    Version,
}

fn report(e: &RunError) -> ExitCode {
    match e {
        RunError::Config(ConfigError::Invalid(diags)) => {
            for d in diags {
                eprintln!("error: {d}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides, out } => match run(&config, &overrides, out.as_deref()) {
            Ok(dir) => {
                println!("wrote {}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        },
        Command::Validate { config, overrides } => match prepare(&config, &overrides) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => report(&RunError::Config(e)),
        },
        Command::Version => {
            println!("mnl {VERSION}");
            ExitCode::SUCCESS
        }
    }
}
