use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bels_cli::commands::{cmd_ablate, cmd_generate, cmd_run, cmd_sweep, RunOptions, SweepParam};
use bels_cli::{CliError, GenerateSpec, RunConfig};
use clap::{Parser, Subcommand};

/// Broad ensemble learning experiments on drifting streams.
#[derive(Parser)]
#[command(name = "bels", version)]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prequential run of one configured experiment.
    Run {
        config: PathBuf,
        /// Continue from the snapshot in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the four ablation variants on the same stream.
    Ablate { config: PathBuf },
    /// Vary one hyperparameter, everything else fixed.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values, e.g. 1,2,5,10.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Write samples from a stream spec to CSV.
    Generate {
        spec: PathBuf,
        out: PathBuf,
        #[arg(long)]
        count: usize,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, resume } => {
            let cfg = load(&config, cli.seed)?;
            cmd_run(
                &cfg,
                RunOptions {
                    quiet: cli.quiet,
                    resume,
                },
            )
            .map(|_| ())
        }
        Command::Ablate { config } => cmd_ablate(&load(&config, cli.seed)?, cli.quiet).map(|_| ()),
        Command::Sweep {
            config,
            param,
            values,
        } => cmd_sweep(&load(&config, cli.seed)?, param, &values, cli.quiet).map(|_| ()),
        Command::Generate { spec, out, count } => {
            let mut spec = GenerateSpec::load(&spec)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            cmd_generate(&spec, &out, count)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
