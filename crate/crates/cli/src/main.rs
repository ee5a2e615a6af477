use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrplift_cli::{base_dir, load_scenario, run_scenario, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "mrplift", version, about = "Hybrid MRP lifting and closed-loop attitude scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run(RunArgs),
    /// Check a scenario against every constraint without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "MRPLIFT_OUT_DIR", default_value = "mrplift-out")]
    out_dir: PathBuf,
    /// Worker threads for stability sweeps (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Seed for random initial conditions, overriding the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Factor applied to every check tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let sc = match load_scenario(&config) {
                Ok(sc) => sc,
                Err(e) => return fail(&e),
            };
            let diags = sc.validate(base_dir(&config));
            for d in &diags {
                println!("{d}");
            }
            if diags.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: {} constraint violation(s) in {}", diags.len(), config.display());
                ExitCode::from(2)
            }
        }
        Command::Run(args) => {
            let sc = match load_scenario(&args.config) {
                Ok(sc) => sc,
                Err(e) => return fail(&e),
            };
            let opts = RunOptions {
                out_dir: args.out_dir,
                workers: args.workers,
                seed: args.seed,
                tol_scale: args.tol_scale,
                config_path: Some(args.config.clone()),
            };
            match run_scenario(&sc, base_dir(&args.config), &opts) {
                Ok(outcome) if outcome.passed => {
                    println!("{}", outcome.summary);
                    ExitCode::SUCCESS
                }
                Ok(outcome) => {
                    println!("{}", outcome.summary);
                    eprintln!("error: check failed: {}", outcome.failed_checks().join(", "));
                    ExitCode::from(1)
                }
                Err(e) => fail(&e),
            }
        }
    }
}
