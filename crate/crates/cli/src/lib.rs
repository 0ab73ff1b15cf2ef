//! Library surface of the pipeline driver, exposed so integration tests can
//! run commands in-process.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use lenprobe::Error;

pub use commands::Ctx;
pub use config::ExperimentConfig;

/// Exit code contract: 0 success, 1 usage, 2 data/provenance, 3 internal.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Io(_) => 3,
        _ => 2,
    }
}

/// Builds a command context from flag values.
pub fn build_ctx(
    config_path: Option<PathBuf>,
    out_dir: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    override_provenance: bool,
) -> Result<Ctx, Error> {
    let mut cfg = match &config_path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        cfg.threads = t;
    }
    Ok(Ctx { cfg, out_dir, override_provenance })
}
