use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bidomain_rothe::config::load_config;
use bidomain_rothe::error::Error;
use bidomain_rothe::experiment::run_experiment;

/// Rothe-scheme solver for bidomain problems with nonsmooth interface conditions.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress the summary on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a configuration file without running it.
    Validate { config: PathBuf },
}

fn report(err: &Error) -> ExitCode {
    match err {
        Error::Config(errors) => {
            for e in errors {
                eprintln!("error: {e}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(c) => {
                println!("{}: valid {} configuration", config.display(), c.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        },
        Command::Run { config, out, quiet } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return report(&e),
            };
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            match run_experiment(&cfg, &dir) {
                Ok(summary) => {
                    if !quiet {
                        for line in &summary.lines {
                            println!("{line}");
                        }
                        for f in &summary.files {
                            println!("wrote {}", f.display());
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e),
            }
        }
    }
}
