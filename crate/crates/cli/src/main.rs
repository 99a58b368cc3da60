use std::path::PathBuf;
use std::process::ExitCode;

use bingham_cli::{run_config, CliError, Mode, RunConfig, EXIT_ERROR, EXIT_NONCONVERGENCE};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bingham",
    version,
    about = "Regularized Bingham flow solver and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode given in the configuration.
    Run(RunArgs),
    /// Run the configuration as a stationary solve.
    Stationary(RunArgs),
    /// Run the configuration as a time evolution.
    Evolve(RunArgs),
    /// Run a regularization continuation study.
    EpsStudy(RunArgs),
    /// Run a grid refinement study.
    GridStudy(RunArgs),
    /// Check the boundary frame identities.
    FrameCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    config: PathBuf,
    /// Output directory (overrides `output` in the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized audits (overrides `seed` in the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(mode: Option<Mode>, args: RunArgs) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_config(&cfg, &out)?;
    for p in &outcome.artifacts {
        log::info!("wrote {}", p.display());
    }
    Ok(outcome.success)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (mode, args) = match cli.command {
        Command::Run(a) => (None, a),
        Command::Stationary(a) => (Some(Mode::Stationary), a),
        Command::Evolve(a) => (Some(Mode::Evolve), a),
        Command::EpsStudy(a) => (Some(Mode::EpsStudy), a),
        Command::GridStudy(a) => (Some(Mode::GridStudy), a),
        Command::FrameCheck(a) => (Some(Mode::FrameCheck), a),
    };
    match execute(mode, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bingham: run finished without converging; artifacts were written");
            ExitCode::from(EXIT_NONCONVERGENCE as u8)
        }
        Err(e) => {
            eprintln!("bingham: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
