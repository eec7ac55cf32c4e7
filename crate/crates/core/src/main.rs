use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use edgemac::harness::{parse_config, run_pipeline, Command, RunConfig};
use edgemac::{Error, Result};

/// Edge-map shape descriptors: training, extraction, retrieval and evaluation.
#[derive(Debug, Parser)]
#[command(name = "edgemac", version)]
struct Cli {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config {
                key: "threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config {
        key: "threads".into(),
        reason: e.to_string(),
    })?;
    pool.install(|| run_pipeline(&cli.command, &cfg, &cli.out))
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("edgemac: {e}");
            ExitCode::FAILURE
        }
    }
}
