use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: &'a T,
}

/// Records the command and its flags next to the outputs. Machine-specific
/// flags (output location, worker count) are left out so that identical
/// runs leave identical trees.
pub fn write_run_config<T: Serialize>(path: &Path, command: &'static str, args: &T) -> Result<()> {
    let cfg = RunConfig {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args,
    };
    sqrec::io::write_json(path, &cfg).with_context(|| format!("writing {}", path.display()))
}

/// Runs `f` on a pool with `jobs` workers, or the default count.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}
