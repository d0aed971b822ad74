use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fbis_cli::config::MAX_SEED;
use fbis_cli::{configure_threads, parse_config, resolve_output_dir, run_experiment, ConfigError, RunError};

#[derive(Parser)]
#[command(name = "fbis", version, about = "Run importance-sampling experiments from a configuration file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration file.
    Run {
        config: PathBuf,
        /// Override a key, e.g. `--set lsmc.trajectories=2000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (default: `output_dir`, else $FBIS_OUTPUT_ROOT/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding the `seed` key.
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run { config, set, out, seed } = Cli::parse().command;
    let code = match run(&config, set, out, seed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn run(path: &PathBuf, mut set: Vec<String>, out: Option<PathBuf>, seed: Option<u64>) -> Result<i32, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        set.push(format!("seed={s}"));
    }
    let config = parse_config(&text, &set)?;
    configure_threads(config.threads);
    let dir = resolve_output_dir(&config, out.as_deref());
    let status = run_experiment(&config, &dir)?;
    println!("{} -> {} (exit {})", config.experiment.name(), dir.display(), status.exit_code());
    Ok(status.exit_code())
}
