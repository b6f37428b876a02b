use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flexsim_cli::{execute, CliError, Command, ExperimentConfig, Overrides};
use flexsim_core::Resolution;

#[derive(Debug, Parser)]
#[command(
    name = "flexsim",
    version,
    about = "Forecast device activations and price their flexibility"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Use a single time flexibility instead of the configured list.
    #[arg(long, global = true)]
    tau: Option<usize>,

    /// hourly, group or daily.
    #[arg(long, global = true)]
    resolution: Option<Resolution>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Label readings and check the market file.
    Ingest,
    /// Cross-validate and fit the classifier.
    Train,
    /// Score the test days and build offer shapes.
    Forecast,
    /// Schedule the test days at the largest tau.
    Schedule,
    /// Classification metrics and the savings sweep.
    Evaluate,
    /// Write synthetic readings and market files.
    Synth,
    /// Render report.json and plot-ready CSVs.
    Report,
    /// Every stage in order.
    Run,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        tau: cli.tau,
        resolution: cli.resolution,
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.clone(),
    });
    cfg.validate()?;
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::Ingest => Command::Ingest,
        Cmd::Train => Command::Train,
        Cmd::Forecast => Command::Forecast,
        Cmd::Schedule => Command::Schedule,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Synth => Command::Synth,
        Cmd::Report => Command::Report,
        Cmd::Run => Command::Run,
    };
    match load(&cli).and_then(|cfg| execute(command, cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
