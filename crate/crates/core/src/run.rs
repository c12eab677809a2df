//! Run directories: checkpoint discovery and concurrent scanning.
//!
//! A run directory holds checkpoint containers (`*.safetensors`) next to
//! same-stem JSON sidecars carrying `{checkpoint_id, tokens_b, stage}`.
//! Checkpoints are ordered by `tokens_b`, never by file name.

use std::path::{Path, PathBuf};

use crate::checkpoint_io::{open_container, MappingConfig, NonFinitePolicy};
use crate::weight_stats::{checkpoint_stats, CheckpointMeta, CheckpointStats, Result, StatsError};

pub const CONTAINER_EXTENSION: &str = "safetensors";

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub container: PathBuf,
    pub sidecar: PathBuf,
    pub meta: CheckpointMeta,
}

/// Finds every container with a sidecar in `dir`, sorted by tokens.
/// Containers without a sidecar are an error; duplicate token counts too.
pub fn discover_run(dir: impl AsRef<Path>) -> Result<Vec<RunEntry>> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| StatsError::Sidecar {
        path: dir.display().to_string(),
        reason: e.to_string(),
    };
    let mut entries = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io)? {
        let path = item.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(CONTAINER_EXTENSION) || !path.is_file() {
            continue;
        }
        let sidecar = path.with_extension("json");
        if !sidecar.is_file() {
            return Err(StatsError::Sidecar {
                path: sidecar.display().to_string(),
                reason: format!("missing metadata for {}", path.display()),
            });
        }
        let meta = CheckpointMeta::read(&sidecar)?;
        entries.push(RunEntry {
            container: path,
            sidecar,
            meta,
        });
    }
    entries.sort_by(|a, b| a.meta.tokens_b.total_cmp(&b.meta.tokens_b));
    for pair in entries.windows(2) {
        if pair[0].meta.tokens_b == pair[1].meta.tokens_b {
            return Err(StatsError::DuplicateTokenCount {
                tokens_b: pair[0].meta.tokens_b,
                first: pair[0].meta.checkpoint_id.clone(),
                second: pair[1].meta.checkpoint_id.clone(),
            });
        }
    }
    Ok(entries)
}

/// Computes per-checkpoint statistics on up to `jobs` threads, capped by the
/// number of entries and available cores. Results come back in the order of
/// `entries`, whatever order the work finishes in.
pub fn scan_run(
    entries: &[RunEntry],
    cfg: &MappingConfig,
    policy: NonFinitePolicy,
    jobs: usize,
) -> Result<Vec<CheckpointStats>> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    scan_on_threads(entries, cfg, policy, jobs.min(entries.len()).min(cores))
}

fn scan_on_threads(
    entries: &[RunEntry],
    cfg: &MappingConfig,
    policy: NonFinitePolicy,
    threads: usize,
) -> Result<Vec<CheckpointStats>> {
    let scan_one = |e: &RunEntry| -> Result<CheckpointStats> {
        let index = open_container(&e.container)?;
        checkpoint_stats(&index, cfg, &e.meta, policy)
    };
    if threads <= 1 {
        return entries.iter().map(scan_one).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool starts");
    pool.install(|| entries.par_iter().map(scan_one).collect())
}
