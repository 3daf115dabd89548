//! Config ingestion, experiment orchestration and result persistence for `szego-lab`.

pub mod commands;
pub mod config;
pub mod store;

use std::path::PathBuf;

use config::Command;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_SUITE: i32 = 4;

#[derive(Debug, clap::Parser)]
#[command(name = "szego-lab", version, about = "Spectral experiments on quasi-periodic CMV matrices")]
pub struct Cli {
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out` key.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub no_cache: bool,
}

/// Runs the CLI and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return EXIT_CONFIG;
        }
    };
    let cfg = match config::validate(&text, Some(cli.command)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return EXIT_CONFIG;
        }
    };
    let threads = cli.threads.or(cfg.threads);
    if let Some(t) = threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        // Only fails if a pool already exists, which is harmless: results do not depend on it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli.out.or_else(|| cfg.out.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("szego-out"));
    match store::run(&cfg, &out, !cli.no_cache) {
        Ok(outcome) => {
            if let Some(w) = &outcome.cache_warning {
                eprintln!("warning: {w}; recomputed");
            }
            println!("{}", outcome.run_dir.display());
            if outcome.suite_failed {
                eprintln!("acceptance suite failed; see {}", outcome.run_dir.join("suite.csv").display());
                EXIT_SUITE
            } else {
                EXIT_OK
            }
        }
        Err(e @ store::RunError::Compute { .. }) => {
            eprintln!("error: {e}");
            EXIT_COMPUTE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_COMPUTE
        }
    }
}
