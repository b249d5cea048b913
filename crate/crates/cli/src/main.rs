use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use srdf_kit_cli::{run, CliError, RunConfig, Task};

/// Sampling rate distortion functions of Gaussian sources.
#[derive(Debug, Parser)]
#[command(name = "srdf-kit", version)]
struct Args {
    /// What to compute.
    #[arg(value_enum)]
    task: Task,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel engines.
    #[arg(long, env = "SRDF_KIT_THREADS")]
    threads: Option<usize>,
}

fn execute(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let artifacts = run(args.task, &cfg, seed)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir())
        .unwrap_or_else(|| PathBuf::from("srdf-kit-out"));
    artifacts.write_to(&dir)?;
    Ok(artifacts.files.iter().map(|(name, _)| dir.join(name)).collect())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
