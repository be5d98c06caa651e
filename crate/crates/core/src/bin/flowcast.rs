use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowcast::config::RunConfig;
use flowcast::{run, Error};

/// Streamflow forecasting toolkit: synthetic watersheds, a
/// graph-convolutional GRU base model with rating-curve conversion, and a
/// staged residual-error correction cascade.
#[derive(Parser)]
#[command(name = "flowcast", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (checkpoints, audits, metrics).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict to a single forecast horizon (1..=6).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=6))]
    horizon: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic watershed dataset.
    Synth(CommonArgs),
    /// Train the base forecaster per horizon.
    Train(CommonArgs),
    /// Forecast with trained checkpoints and run the correction cascade.
    Forecast(CommonArgs),
    /// Evaluate the base model, baselines, and corrections.
    Evaluate(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, Error> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_command(cli: Cli) -> Result<(), Error> {
    let (args, runner): (
        &CommonArgs,
        fn(&RunConfig, &std::path::Path, Option<usize>) -> Result<Vec<PathBuf>, Error>,
    ) = match &cli.command {
        Command::Synth(a) => (a, |c, o, _| run::cmd_synth(c, o)),
        Command::Train(a) => (a, run::cmd_train),
        Command::Forecast(a) => (a, run::cmd_forecast),
        Command::Evaluate(a) => (a, run::cmd_evaluate),
    };
    let config = load_config(args)?;
    let outputs = runner(&config, &args.out, args.horizon.map(|h| h as usize))?;
    for path in outputs {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
