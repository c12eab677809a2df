//! Training-state telemetry for large-model pretraining runs.
//!
//! - [`checkpoint_io`]: checkpoint container parsing and tensor-name mapping
//! - [`weight_stats`]: per-tensor statistics and std-vs-layer trajectories
//! - [`trajectory`]: Fréchet distances between successive checkpoints
//! - [`monitor`]: loss / eval-score series, spike and plateau detection
//! - [`planner`]: staged data-mixture recipes, sampling plans, LR and batch schedules
//! - [`report`]: deterministic SVG / CSV / JSON report bundles
//! - [`fixtures`]: synthetic checkpoints and loss curves with known ground truth
//! - [`run`]: checkpoint-directory discovery and concurrent scanning

pub mod checkpoint_io;
pub mod fixtures;
pub mod monitor;
pub mod planner;
pub mod report;
pub mod run;
pub mod trajectory;
pub mod weight_stats;
