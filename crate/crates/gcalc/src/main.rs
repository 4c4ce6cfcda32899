use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gcalc::{run_experiment, Command, Request};

/// Sublinear-expectation experiments under volatility uncertainty.
#[derive(Parser)]
#[command(name = "gcalc", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { gcalc::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let code = run_experiment(&Request {
        command: cli.command,
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    });
    ExitCode::from(code as u8)
}
