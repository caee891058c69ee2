//! Experiment runner for sharpness-measure studies: JSON configs in, CSV
//! tables and SVG charts out.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod table;

use std::path::{Path, PathBuf};

pub use commands::Command;
pub use error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SHARPNESS_LAB_OUT";

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// `--out`, then the config's `output_dir` (relative to the config file),
/// then `$SHARPNESS_LAB_OUT`, then `./out`.
pub fn resolve_out_dir(
    out: Option<&Path>,
    config_dir: Option<&Path>,
    base_dir: &Path,
    env: Option<&str>,
) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(c) = config_dir {
        return if c.is_absolute() { c.to_path_buf() } else { base_dir.join(c) };
    }
    match env {
        Some(e) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from("out"),
    }
}

pub fn run(args: &RunArgs) -> CliResult<Vec<PathBuf>> {
    let loaded = config::load_config(&args.config)?;
    let env = std::env::var(OUT_ENV).ok();
    let out_dir = resolve_out_dir(
        args.out.as_deref(),
        loaded.config.output_dir.as_deref(),
        &loaded.base_dir,
        env.as_deref(),
    );
    let ctx = commands::Context {
        loaded: &loaded,
        out_dir,
        seed_override: args.seed,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be ≥ 1".into()));
        }
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(args.command, &ctx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_precedence() {
        let base = Path::new("/cfg");
        let flag = Path::new("/flag");
        let rel = Path::new("rel");
        assert_eq!(resolve_out_dir(Some(flag), Some(rel), base, Some("/env")), flag);
        assert_eq!(resolve_out_dir(None, Some(rel), base, Some("/env")), Path::new("/cfg/rel"));
        assert_eq!(resolve_out_dir(None, None, base, Some("/env")), Path::new("/env"));
        assert_eq!(resolve_out_dir(None, None, base, None), Path::new("out"));
        assert_eq!(resolve_out_dir(None, None, base, Some("")), Path::new("out"));
    }
}
