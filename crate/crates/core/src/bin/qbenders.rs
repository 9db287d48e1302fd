use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qbenders::experiments::{self, Overrides, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "qbenders", version, about = "Benders-cut Q-function learning for constrained LQ control")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, replacing the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for both sampling and point selection.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One algorithm run: run_log.csv, sweep.csv, cuts and summary.
    Run,
    /// Q_I surfaces at geometric checkpoints (scalar instances only).
    Surface {
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Variant B over random systems and several M, aggregated into batch.csv.
    Batch,
    /// Closed-loop cost of a learned policy against clipped LQR.
    PolicyEval,
    /// Grid value iteration dump.
    Oracle,
    /// Config parse and instance checks.
    Validate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    let mut ov = Overrides {
        out: cli.out,
        seed: cli.seed,
        workers: cli.workers,
        verbose: cli.verbose,
        resolution: None,
    };
    let code = match cli.command {
        Command::Run => experiments::cmd_run(&config, &ov),
        Command::Surface { resolution } => {
            ov.resolution = resolution;
            experiments::cmd_surface(&config, &ov)
        }
        Command::Batch => experiments::cmd_batch(&config, &ov),
        Command::PolicyEval => experiments::cmd_policy_eval(&config, &ov),
        Command::Oracle => experiments::cmd_oracle(&config, &ov),
        Command::Validate => experiments::cmd_validate(&config, &ov),
    };
    ExitCode::from(code as u8)
}
