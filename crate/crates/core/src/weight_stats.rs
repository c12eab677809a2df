//! Per-tensor statistics and per-role std-vs-layer trajectories.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint_io::{CheckpointError, ContainerIndex, Mapped, MappingConfig, NonFinitePolicy, ParameterRole};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("cannot compute statistics of an empty tensor")]
    EmptyTensor,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint {checkpoint}: layer {layer} lacks {role}")]
    MissingRole {
        checkpoint: String,
        layer: usize,
        role: ParameterRole,
    },
    #[error("checkpoint {checkpoint}: layers {layers:?} are not a contiguous range starting at 0")]
    NonContiguousLayers { checkpoint: String, layers: Vec<usize> },
    #[error("checkpoint {checkpoint}: tensors {first:?} and {second:?} both map to layer {layer} {role}")]
    DuplicateParameter {
        checkpoint: String,
        layer: usize,
        role: ParameterRole,
        first: String,
        second: String,
    },
    #[error("checkpoint {checkpoint}: tokens_b must be finite and >= 0, got {tokens_b}")]
    BadTokenCount { checkpoint: String, tokens_b: f64 },
    #[error("checkpoints {first} and {second} share tokens_b {tokens_b}")]
    DuplicateTokenCount { tokens_b: f64, first: String, second: String },
    #[error("checkpoint id {0:?} appears more than once")]
    DuplicateCheckpointId(String),
    #[error("checkpoint {checkpoint} does not share the (layer, role) grid of {reference}")]
    GridMismatch { checkpoint: String, reference: String },
    #[error("no checkpoints given")]
    NoCheckpoints,
    #[error("sidecar {path}: {reason}")]
    Sidecar { path: String, reason: String },
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// Moments and range of one tensor. `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    pub rms: f64,
    pub min: f64,
    pub max: f64,
}

/// Single-pass moment accumulator (Welford updates with Kahan-compensated
/// running mean and second moment). Element order is the push order, so a
/// fixed input order gives bit-identical results.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    count: u64,
    mean: f64,
    mean_c: f64,
    m2: f64,
    m2_c: f64,
    min: f64,
    max: f64,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        StatsAccumulator {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let n = self.count as f64;
        let delta = (x - self.mean) + self.mean_c;

        let y = delta / n - self.mean_c;
        let t = self.mean + y;
        self.mean_c = (t - self.mean) - y;
        self.mean = t;

        let inc = delta * ((x - self.mean) + self.mean_c) - self.m2_c;
        let t = self.m2 + inc;
        self.m2_c = (t - self.m2) - inc;
        self.m2 = t;

        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<Stats> {
        if self.count == 0 {
            return Err(StatsError::EmptyTensor);
        }
        let n = self.count as f64;
        let mean = self.mean - self.mean_c;
        let var = ((self.m2 - self.m2_c) / n).max(0.0);
        Ok(Stats {
            count: self.count,
            mean,
            std: var.sqrt(),
            // Mean of squares, written through the moments.
            rms: (var + mean * mean).sqrt(),
            min: self.min,
            max: self.max,
        })
    }
}

impl Extend<f64> for StatsAccumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

pub fn tensor_stats(values: &[f64]) -> Result<Stats> {
    let mut acc = StatsAccumulator::new();
    acc.extend(values.iter().copied());
    acc.finish()
}

/// Contents of the per-checkpoint sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub checkpoint_id: String,
    pub tokens_b: f64,
    pub stage: String,
}

impl CheckpointMeta {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar_err = |reason: String| StatsError::Sidecar {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| sidecar_err(e.to_string()))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| sidecar_err(e.to_string()))?;
        if !meta.tokens_b.is_finite() || meta.tokens_b < 0.0 {
            return Err(sidecar_err(format!("tokens_b must be finite and >= 0, got {}", meta.tokens_b)));
        }
        Ok(meta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("meta serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: usize,
    pub role: ParameterRole,
    pub tensor: String,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub checkpoint_id: String,
    pub tokens_b: f64,
    pub stage: String,
    /// Sorted by (layer, role).
    pub per_layer: Vec<LayerStat>,
    #[serde(default)]
    pub dropped_non_finite: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CheckpointStats {
    pub fn get(&self, layer: usize, role: ParameterRole) -> Option<&Stats> {
        self.per_layer
            .binary_search_by(|e| (e.layer, e.role).cmp(&(layer, role)))
            .ok()
            .map(|i| &self.per_layer[i].stats)
    }

    /// Distinct layers that hold at least one monitored role.
    pub fn layers(&self) -> BTreeSet<usize> {
        self.per_layer
            .iter()
            .filter(|e| e.role.is_monitored())
            .map(|e| e.layer)
            .collect()
    }

    fn monitored_grid(&self) -> BTreeSet<(usize, ParameterRole)> {
        self.per_layer
            .iter()
            .filter(|e| e.role.is_monitored())
            .map(|e| (e.layer, e.role))
            .collect()
    }
}

/// Computes one [`Stats`] per mapped (layer, role) of a checkpoint.
///
/// Strict configs reject unmapped tensors, gaps in the layer range and
/// layers missing any of the nine monitored roles; lenient configs skip
/// unmapped tensors and record the gaps as warnings.
pub fn checkpoint_stats(
    index: &ContainerIndex,
    cfg: &MappingConfig,
    meta: &CheckpointMeta,
    policy: NonFinitePolicy,
) -> Result<CheckpointStats> {
    let id = &meta.checkpoint_id;
    if !meta.tokens_b.is_finite() || meta.tokens_b < 0.0 {
        return Err(StatsError::BadTokenCount {
            checkpoint: id.clone(),
            tokens_b: meta.tokens_b,
        });
    }

    let mut entries: BTreeMap<(usize, ParameterRole), LayerStat> = BTreeMap::new();
    let mut dropped = 0u64;
    let mut warnings = Vec::new();
    for record in &index.tensors {
        let Mapped::Layer { layer, role } = cfg.map_parameter(&record.name)? else {
            continue;
        };
        if let Some(prev) = entries.get(&(layer, role)) {
            return Err(StatsError::DuplicateParameter {
                checkpoint: id.clone(),
                layer,
                role,
                first: prev.tensor.clone(),
                second: record.name.clone(),
            });
        }
        let mut acc = StatsAccumulator::new();
        dropped += index.visit_record(record, policy, |v| acc.push(v))? as u64;
        let stats = match acc.finish() {
            Ok(s) => s,
            Err(StatsError::EmptyTensor) if !cfg.strict => {
                warnings.push(format!("tensor {} has no finite elements; skipped", record.name));
                continue;
            }
            Err(e) => return Err(e),
        };
        entries.insert(
            (layer, role),
            LayerStat {
                layer,
                role,
                tensor: record.name.clone(),
                stats,
            },
        );
    }
    if dropped > 0 {
        warnings.push(format!("dropped {dropped} non-finite elements"));
    }

    let out = CheckpointStats {
        checkpoint_id: id.clone(),
        tokens_b: meta.tokens_b,
        stage: meta.stage.clone(),
        per_layer: entries.into_values().collect(),
        dropped_non_finite: dropped,
        warnings,
    };
    check_grid(out, cfg.strict)
}

fn check_grid(mut stats: CheckpointStats, strict: bool) -> Result<CheckpointStats> {
    let layers = stats.layers();
    let contiguous = layers.iter().enumerate().all(|(i, &l)| i == l);
    if !contiguous {
        if strict {
            return Err(StatsError::NonContiguousLayers {
                checkpoint: stats.checkpoint_id.clone(),
                layers: layers.into_iter().collect(),
            });
        }
        stats
            .warnings
            .push(format!("layers {:?} are not contiguous from 0", layers.iter().collect::<Vec<_>>()));
    }
    let grid = stats.monitored_grid();
    let mut missing = Vec::new();
    for &layer in &layers {
        for role in ParameterRole::MONITORED {
            if !grid.contains(&(layer, role)) {
                if strict {
                    return Err(StatsError::MissingRole {
                        checkpoint: stats.checkpoint_id.clone(),
                        layer,
                        role,
                    });
                }
                missing.push(format!("layer {layer} lacks {role}"));
            }
        }
    }
    stats.warnings.extend(missing);
    Ok(stats)
}

/// Which per-tensor statistic forms the trajectory value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Std,
    Rms,
}

impl Metric {
    pub fn of(self, stats: &Stats) -> f64 {
        match self {
            Metric::Std => stats.std,
            Metric::Rms => stats.rms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub layer: usize,
    pub value: f64,
}

/// Curve of one role's statistic over layer index, for one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub checkpoint_id: String,
    pub role: ParameterRole,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub metric: Metric,
    /// Strictly increasing in `tokens_b`.
    pub checkpoints: Vec<CheckpointStats>,
    /// Grouped by checkpoint (in checkpoint order), then by role.
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn trajectory(&self, checkpoint_id: &str, role: ParameterRole) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.role == role && t.checkpoint_id == checkpoint_id)
    }

    pub fn checkpoint(&self, checkpoint_id: &str) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.checkpoint_id == checkpoint_id)
    }

    /// Monitored roles with a trajectory at every checkpoint, in role order.
    pub fn roles(&self) -> Vec<ParameterRole> {
        ParameterRole::MONITORED
            .into_iter()
            .filter(|&role| {
                self.checkpoints
                    .iter()
                    .all(|c| self.trajectory(&c.checkpoint_id, role).is_some())
            })
            .collect()
    }

    /// Monitored roles present at any checkpoint.
    pub fn any_roles(&self) -> Vec<ParameterRole> {
        ParameterRole::MONITORED
            .into_iter()
            .filter(|&role| self.trajectories.iter().any(|t| t.role == role))
            .collect()
    }
}

/// Orders checkpoints by tokens and assembles one trajectory per
/// (checkpoint, monitored role). Fused and unclassified tensors never get a
/// trajectory.
pub fn build_trajectory_set(mut stats: Vec<CheckpointStats>, metric: Metric, strict: bool) -> Result<TrajectorySet> {
    if stats.is_empty() {
        return Err(StatsError::NoCheckpoints);
    }
    for c in &stats {
        if !c.tokens_b.is_finite() || c.tokens_b < 0.0 {
            return Err(StatsError::BadTokenCount {
                checkpoint: c.checkpoint_id.clone(),
                tokens_b: c.tokens_b,
            });
        }
    }
    let mut ids = BTreeSet::new();
    for c in &stats {
        if !ids.insert(c.checkpoint_id.as_str()) {
            return Err(StatsError::DuplicateCheckpointId(c.checkpoint_id.clone()));
        }
    }
    stats.sort_by(|a, b| a.tokens_b.total_cmp(&b.tokens_b));
    for pair in stats.windows(2) {
        if pair[0].tokens_b == pair[1].tokens_b {
            return Err(StatsError::DuplicateTokenCount {
                tokens_b: pair[0].tokens_b,
                first: pair[0].checkpoint_id.clone(),
                second: pair[1].checkpoint_id.clone(),
            });
        }
    }
    if strict {
        let reference = stats[0].monitored_grid();
        for c in &stats[1..] {
            if c.monitored_grid() != reference {
                return Err(StatsError::GridMismatch {
                    checkpoint: c.checkpoint_id.clone(),
                    reference: stats[0].checkpoint_id.clone(),
                });
            }
        }
    }

    let mut trajectories = Vec::new();
    for c in &stats {
        for role in ParameterRole::MONITORED {
            // per_layer is sorted by (layer, role), so points come out in layer order.
            let points: Vec<CurvePoint> = c
                .per_layer
                .iter()
                .filter(|e| e.role == role)
                .map(|e| CurvePoint {
                    layer: e.layer,
                    value: metric.of(&e.stats),
                })
                .collect();
            if !points.is_empty() {
                trajectories.push(Trajectory {
                    checkpoint_id: c.checkpoint_id.clone(),
                    role,
                    points,
                });
            }
        }
    }
    Ok(TrajectorySet {
        metric,
        checkpoints: stats,
        trajectories,
    })
}
