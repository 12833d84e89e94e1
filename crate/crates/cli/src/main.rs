//! `tpinn`: dataset generation, training, zero-shot evaluation, λ grid
//! search and latency benchmarks.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Context};

#[derive(Parser)]
#[command(name = "tpinn", version, about = "Closed-form head adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the canonical reference output.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to `$TPINN_OUT/<config name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Default output root.
    #[arg(long, env = "TPINN_OUT", default_value = "runs", hide = true)]
    out_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset, from a config or from --problem/--count.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train every model the configured methods need, for every K.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Select λ_PDE and λ_PI on the seen instances.
    Gridsearch {
        #[command(flatten)]
        common: Common,
    },
    /// Adapt to every instance and write the results table.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also write each prediction grid.
        #[arg(long)]
        emit_grids: bool,
    },
    /// Time adaptation against a single-instance PINN.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn setup(common: &Common) -> Result<(), CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common, problem, count } => {
            setup(&common)?;
            match (&common.config, problem) {
                (Some(_), None) if count.is_none() => {
                    let ctx = Context::load(common.config.as_deref(), common.seed, common.out.as_deref(), &common.out_root)?;
                    commands::gen(&ctx)
                }
                (None, Some(p)) => commands::gen_direct(&p, count, common.seed.unwrap_or(0), common.out.as_deref(), &common.out_root),
                _ => Err(CliError::Config("gen takes either --config or --problem with --count".into())),
            }
        }
        Command::Train { common } => {
            setup(&common)?;
            commands::train(&Context::load(common.config.as_deref(), common.seed, common.out.as_deref(), &common.out_root)?)
        }
        Command::Gridsearch { common } => {
            setup(&common)?;
            commands::gridsearch(&Context::load(common.config.as_deref(), common.seed, common.out.as_deref(), &common.out_root)?)
        }
        Command::Eval { common, emit_grids } => {
            setup(&common)?;
            let ctx = Context::load(common.config.as_deref(), common.seed, common.out.as_deref(), &common.out_root)?;
            commands::eval(&ctx, emit_grids)
        }
        Command::Bench { common } => {
            setup(&common)?;
            commands::bench(&Context::load(common.config.as_deref(), common.seed, common.out.as_deref(), &common.out_root)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
