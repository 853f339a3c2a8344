use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pqvar::cli::{self, Command};

/// Spectral thresholds, eigenfunctions and nonresonant solutions of
/// weighted (p,q)-Laplacian problems.
#[derive(Debug, Parser)]
#[command(name = "pqvar", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Mesh override, e.g. `interval:n=256` or `square:n=16`.
    #[arg(long)]
    mesh: Option<String>,

    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match cli::run(args.command, &args.config, args.mesh.as_deref(), args.out.as_deref()) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            ExitCode::from(report.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
