//! `vmpfc` command-line front end.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "vmpfc", version, about = "Pseudospectral VMPFC solver")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set scheme.S=100`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (default: output.dir, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "VMPFC_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fixed-step or adaptive run; writes series.csv and snapshots.
    Run,
    /// Temporal convergence study on the manufactured solution.
    Converge,
    /// Runs the configured controllers (and an optional fixed-step reference).
    AdaptCompare,
    /// Prints resolved parameters, symbol checks and initial auxiliary values.
    Info,
    /// Replays the run invariants over a series file.
    VerifySeries {
        csv: PathBuf,
        /// Also check the bound on consecutive step ratios.
        #[arg(long)]
        ratio_max: Option<f64>,
        /// Also check that the guaranteed energy never rises between rows
        /// with the same stabilization.
        #[arg(long)]
        energy: bool,
    },
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("--threads: {e}")))?;
    }
    if let Command::VerifySeries {
        csv,
        ratio_max,
        energy,
    } = &cli.command
    {
        return commands::verify(csv, *ratio_max, *energy);
    }
    let cfg = config::load(cli.config.as_deref(), &cli.set)?;
    let out = cli.out.as_deref();
    log::info!("scheme {}, grid {:?}", cfg.scheme.kind, cfg.grid.n);
    match cli.command {
        Command::Run => commands::run(&cfg, out),
        Command::Converge => commands::converge(&cfg, out),
        Command::AdaptCompare => commands::adapt_compare_cmd(&cfg, out),
        Command::Info => commands::info(&cfg),
        Command::VerifySeries { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vmpfc: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
