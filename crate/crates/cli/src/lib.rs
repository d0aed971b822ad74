//! Configuration-driven runner for the importance-sampling experiments.
//!
//! [`run_experiment`] executes one resolved [`ExperimentConfig`] and writes
//! its artifacts; see `docs/` for the configuration keys and CSV layouts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{parse_config, Experiment, ExperimentConfig};
pub use error::{ConfigError, RunError};

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_VAR: &str = "FBIS_OUTPUT_ROOT";

/// `--out`, then the `output_dir` key, then `$FBIS_OUTPUT_ROOT/<experiment>`,
/// then `fbis-output/<experiment>`.
pub fn resolve_output_dir(config: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if !config.output_dir.is_empty() {
        return PathBuf::from(&config.output_dir);
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fbis-output"));
    root.join(config.experiment.name())
}

/// Size the global worker pool; 0 keeps the runtime default. Only the first
/// call in a process has an effect.
pub fn configure_threads(threads: usize) {
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

/// Outcome of a run as seen by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Passed,
    ChecksFailed,
    /// Carries the process exit code.
    Faulted(i32),
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Passed => 0,
            RunStatus::ChecksFailed => 1,
            RunStatus::Faulted(code) => *code,
        }
    }
}

/// Run `config` into `dir`. Faults keep whatever was written, add a `FAILED`
/// marker and an `error.json` record, and are reported through the status.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<RunStatus, RunError> {
    fs::create_dir_all(dir)?;
    for stale in [output::FAILED_MARKER, output::ERROR_RECORD] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let start = Instant::now();
    let result = match config.experiment {
        Experiment::Committor => experiments::committor(config, dir),
        Experiment::OuShooting => experiments::ou_shooting(config, dir),
        Experiment::OuLsmc => experiments::ou_lsmc(config, dir),
        Experiment::Doublewell => experiments::doublewell(config, dir),
        Experiment::GirsanovCheck => experiments::girsanov_check(config, dir),
        Experiment::Custom => experiments::custom(config, dir),
    };
    let toml = config.to_toml();
    let (status, checks, mut files) = match result {
        Ok(mut out) => {
            output::write_report_csv(&dir.join(output::REPORT_CSV), &out.rows)?;
            fs::write(dir.join(output::REPORT_TXT), output::render_report(&out.title, &out.rows, &out.checks))?;
            out.files.extend([output::REPORT_CSV.to_string(), output::REPORT_TXT.to_string()]);
            let status = if out.checks.iter().all(|c| c.pass) { RunStatus::Passed } else { RunStatus::ChecksFailed };
            (status, out.checks, out.files)
        }
        Err(e) => {
            log::error!("{e}");
            let record = e.record();
            output::write_json(&dir.join(output::ERROR_RECORD), &record)?;
            fs::write(dir.join(output::FAILED_MARKER), format!("{}\n", record.message))?;
            (RunStatus::Faulted(record.exit_code), Vec::new(), vec![output::ERROR_RECORD.to_string(), output::FAILED_MARKER.to_string()])
        }
    };
    files.push(output::METADATA.to_string());
    let label = match status {
        RunStatus::Passed => "passed",
        RunStatus::ChecksFailed => "checks_failed",
        RunStatus::Faulted(_) => "failed",
    };
    let meta = output::Metadata {
        experiment: config.experiment.name(),
        seed: config.seed,
        status: label,
        checks: &checks,
        files,
        versions: output::versions(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: &toml,
    };
    output::write_json(&dir.join(output::METADATA), &meta)?;
    Ok(status)
}
