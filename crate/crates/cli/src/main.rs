//! `cqed`: spectra, correlations, trajectories and fits for a driven
//! atom-cavity system, written as CSV (JSON for fit results).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "cqed", version, about = "Driven atom-cavity correlations, trajectories and fits")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration file.
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy)]
enum Command {
    /// Dressed-state ladder of the undriven system.
    Spectrum,
    /// Second-order correlation.
    G2,
    /// Both branches of the third-order cut.
    G3cut,
    /// Two-time third-order correlation surface.
    G3full,
    /// One quantum trajectory.
    Trajectory,
    /// Fit the damped two-frequency model.
    Fit,
    /// Fitted frequencies versus drive strength.
    Sweep,
    /// Generate a position ensemble from the cavity mode function.
    AvgEnsemble,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(&cli.config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    pool.build_global().map_err(|e| CliError::Config(e.to_string()))?;
    cavity_qed::single_threaded_blas();

    let out = cli.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &out),
        Command::G2 => commands::g2(&cfg, &out),
        Command::G3cut => commands::g3cut(&cfg, &out),
        Command::G3full => commands::g3full(&cfg, &out),
        Command::Trajectory => commands::trajectory(&cfg, &out),
        Command::Fit => commands::fit(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
        Command::AvgEnsemble => commands::avg_ensemble(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error kind={} code={} reason={msg}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
