use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pme_selfsim_cli::{execute, Command, Overrides, RunConfig, EXIT_ASSERTION, EXIT_CONFIG, EXIT_PASS};

/// Self-similar profiles, PDE runs and convergence experiments for the
/// weighted porous medium equation.
#[derive(Parser)]
#[command(name = "pme-selfsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the self-similar profile and write profile.csv.
    Profile(Args),
    /// Run the PDE (experiment kinds: run, smoothing).
    Simulate(Args),
    /// Compare a run with the self-similar solution (kinds: convergence, cross-validation).
    Converge(Args),
    /// Relax a constant state towards a boundary value on the unit ball.
    Barrier(Args),
    /// Evaluate datum norms, weight and datum conditions.
    Norms(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory; replaces output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; replaces experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; replaces experiment.workers.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PME_SELFSIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_PASS as u8 });
        }
    };
    let (command, args) = match cli.command {
        Cmd::Profile(a) => (Command::Profile, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Converge(a) => (Command::Converge, a),
        Cmd::Barrier(a) => (Command::Barrier, a),
        Cmd::Norms(a) => (Command::Norms, a),
    };
    let cfg = std::fs::read_to_string(&args.config)
        .map_err(|e| pme_selfsim_cli::CliError::Config(format!("cannot read {}: {e}", args.config.display())))
        .and_then(|text| RunConfig::parse(&text));
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        workers: args.workers,
    };
    match cfg.and_then(|cfg| execute(command, cfg, &overrides)) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(if outcome.passed { EXIT_PASS } else { EXIT_ASSERTION } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
