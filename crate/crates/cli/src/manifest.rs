//! Run manifests: every subcommand that writes outputs drops a manifest
//! beside them recording the binary version, the full argument vector, the
//! resolved configuration, and the seed, so a run can be reproduced from the
//! manifest alone.

use std::path::Path;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64, threads: usize, config: serde_json::Value) -> Self {
        Self {
            tool: "mpf",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            seed,
            threads,
            config,
        }
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("manifest.json"),
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }
}

/// Intra-op parallelism cap from `MPF_THREADS`. The numeric kernels in this
/// build execute single-threaded (determinism outranks speed), so the
/// effective count is capped at 1; the requested value is still recorded.
pub fn threads_from_env() -> usize {
    std::env::var("MPF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(1)
}
