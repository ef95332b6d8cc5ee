use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pipecal_cli::{execute, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "pipecal",
    version,
    about = "Pipelined ADC calibration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Error-norm traces over the configured step-size sweep.
    Convergence(Common),
    /// True, estimated and residual INL after calibration.
    Inl(Common),
    /// A-priori and empirical step-size bounds.
    Bound(Common),
    /// Start-up plus background calibration with optional drift.
    Twophase(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(command: Command, args: Common) -> Result<String, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| cfg.output.dir.clone());
    execute(command, &cfg, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Bad arguments count as configuration errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Inl(a) => (Command::Inl, a),
        Cmd::Bound(a) => (Command::Bound, a),
        Cmd::Twophase(a) => (Command::TwoPhase, a),
    };
    match run(command, args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pipecal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
