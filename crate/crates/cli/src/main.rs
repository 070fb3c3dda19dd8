use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dartclean::{cmd_clean, cmd_eval, cmd_latent, cmd_synth, cmd_train, CliConfig, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Synth,
    Train,
    Clean,
    Eval,
    Latent,
}

/// Clean tide-gauge series with an iteratively refined variational autoencoder.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    command: Command,
    /// JSON configuration file; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to DARTCLEAN_THREADS.
    #[arg(long, env = "DARTCLEAN_THREADS")]
    threads: Option<usize>,
    /// Override one config value by dotted path, e.g. `train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let config = CliConfig::load(args.config.as_deref(), &args.overrides, args.seed)?;
    env_logger::Builder::new()
        .filter_level(config.verbosity.level())
        .parse_env("RUST_LOG")
        .init();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let written = match args.command {
        Command::Synth => cmd_synth(&config)?,
        Command::Train => cmd_train(&config)?,
        Command::Clean => cmd_clean(&config)?,
        Command::Eval => cmd_eval(&config)?,
        Command::Latent => cmd_latent(&config)?,
    };
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
