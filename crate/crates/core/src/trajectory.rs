//! Discrete Fréchet distance between successive checkpoint trajectories and
//! the token-normalized convergence series built from it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint_io::ParameterRole;
use crate::weight_stats::{CurvePoint, TrajectorySet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("curve is empty")]
    EmptyCurve,
    #[error("layer axis scale must be finite and >= 0, got {0}")]
    BadLayerScale(f64),
    #[error("checkpoint pair ({index}, {}) is out of range for {count} checkpoints", index + 1)]
    IndexOutOfRange { index: usize, count: usize },
    #[error("token counts must strictly increase: {from} -> {to}")]
    NonMonotonicTokens { from: f64, to: f64 },
    #[error("role {role} has no trajectory at checkpoint {checkpoint}")]
    RoleMissing { role: ParameterRole, checkpoint: String },
    #[error("need at least 2 checkpoints, got {0}")]
    TooFewCheckpoints(usize),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Point metric used inside the Fréchet recursion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrechetMode {
    /// |a - b| on values; layers only fix the coupling order.
    #[default]
    ValueOnly,
    /// Euclidean distance on (scale * layer, value).
    Planar { layer_axis_scale: f64 },
}

impl FrechetMode {
    pub fn validate(self) -> Result<Self> {
        match self {
            FrechetMode::Planar { layer_axis_scale } if !(layer_axis_scale.is_finite() && layer_axis_scale >= 0.0) => {
                Err(MetricsError::BadLayerScale(layer_axis_scale))
            }
            _ => Ok(self),
        }
    }

    #[inline]
    pub fn point_distance(self, a: &CurvePoint, b: &CurvePoint) -> f64 {
        match self {
            FrechetMode::ValueOnly => (a.value - b.value).abs(),
            FrechetMode::Planar { layer_axis_scale } => {
                let dx = layer_axis_scale * (a.layer as f64 - b.layer as f64);
                dx.hypot(a.value - b.value)
            }
        }
    }
}

/// Discrete Fréchet distance by dynamic programming over a rolling row.
///
/// `c(i, j) = max(d(p_i, q_j), min(c(i-1, j), c(i-1, j-1), c(i, j-1)))`,
/// result `c(|p|-1, |q|-1)`.
pub fn discrete_frechet(p: &[CurvePoint], q: &[CurvePoint], mode: FrechetMode) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let mode = mode.validate()?;
    let mut prev = vec![0.0f64; q.len()];
    let mut curr = vec![0.0f64; q.len()];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let d = mode.point_distance(pi, qj);
            curr[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(curr[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(prev[j - 1]).min(curr[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[q.len() - 1])
}

/// Fréchet distance between two successive checkpoints, per billion tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub role: ParameterRole,
    pub from_id: String,
    pub to_id: String,
    pub from_tokens_b: f64,
    pub to_tokens_b: f64,
    /// Stage label of the later checkpoint.
    pub stage: String,
    pub raw: f64,
    pub token_gap_b: f64,
    pub normalized: f64,
}

impl DistancePoint {
    pub fn midpoint_tokens_b(&self) -> f64 {
        0.5 * (self.from_tokens_b + self.to_tokens_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub role: ParameterRole,
    pub points: Vec<DistancePoint>,
}

/// Distance between checkpoint `i` and `i + 1` for `role`, divided by the
/// token gap between them.
pub fn normalized_distance(set: &TrajectorySet, role: ParameterRole, i: usize, mode: FrechetMode) -> Result<DistancePoint> {
    let count = set.checkpoints.len();
    if i + 1 >= count {
        return Err(MetricsError::IndexOutOfRange { index: i, count });
    }
    let (from, to) = (&set.checkpoints[i], &set.checkpoints[i + 1]);
    let gap = to.tokens_b - from.tokens_b;
    if !(gap > 0.0) {
        return Err(MetricsError::NonMonotonicTokens {
            from: from.tokens_b,
            to: to.tokens_b,
        });
    }
    let curve = |id: &str| {
        set.trajectory(id, role).ok_or_else(|| MetricsError::RoleMissing {
            role,
            checkpoint: id.to_string(),
        })
    };
    let raw = discrete_frechet(&curve(&from.checkpoint_id)?.points, &curve(&to.checkpoint_id)?.points, mode)?;
    Ok(DistancePoint {
        role,
        from_id: from.checkpoint_id.clone(),
        to_id: to.checkpoint_id.clone(),
        from_tokens_b: from.tokens_b,
        to_tokens_b: to.tokens_b,
        stage: to.stage.clone(),
        raw,
        token_gap_b: gap,
        normalized: raw / gap,
    })
}

/// One series of `M - 1` consecutive-pair distances per role that has a
/// trajectory at every checkpoint.
pub fn distance_series(set: &TrajectorySet, mode: FrechetMode) -> Result<Vec<DistanceSeries>> {
    let count = set.checkpoints.len();
    if count < 2 {
        return Err(MetricsError::TooFewCheckpoints(count));
    }
    set.roles()
        .into_iter()
        .map(|role| {
            let points = (0..count - 1)
                .map(|i| normalized_distance(set, role, i, mode))
                .collect::<Result<Vec<_>>>()?;
            Ok(DistanceSeries { role, points })
        })
        .collect()
}

/// Mean normalized distance across roles at each checkpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRolePoint {
    pub from_tokens_b: f64,
    pub to_tokens_b: f64,
    pub mean_normalized: f64,
    pub roles: usize,
}

pub fn cross_role_mean(series: &[DistanceSeries]) -> Vec<CrossRolePoint> {
    let Some(len) = series.iter().map(|s| s.points.len()).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|k| {
            let sum: f64 = series.iter().map(|s| s.points[k].normalized).sum();
            let head = &series[0].points[k];
            CrossRolePoint {
                from_tokens_b: head.from_tokens_b,
                to_tokens_b: head.to_tokens_b,
                mean_normalized: sum / series.len() as f64,
                roles: series.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Active,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMean {
    pub stage: String,
    pub mean_normalized: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConvergence {
    pub role: ParameterRole,
    pub verdict: Verdict,
    /// Index of the first point at which the trailing window fell below epsilon.
    pub converged_at: Option<usize>,
    pub converged_at_tokens_b: Option<f64>,
    pub stage_means: Vec<StageMean>,
}

/// A role is converged when its last `window` normalized distances are all
/// below `epsilon`. Series shorter than `window` give `InsufficientData`.
pub fn convergence_summary(series: &[DistanceSeries], epsilon: f64, window: usize) -> Vec<RoleConvergence> {
    let window = window.max(1);
    series
        .iter()
        .map(|s| {
            let values: Vec<f64> = s.points.iter().map(|p| p.normalized).collect();
            let below = |end: usize| values[end + 1 - window..=end].iter().all(|&v| v < epsilon);
            let (verdict, converged_at) = if values.len() < window {
                (Verdict::InsufficientData, None)
            } else if below(values.len() - 1) {
                // Earliest end index such that every window from there on stays below.
                let mut first = values.len() - 1;
                while first >= window && below(first - 1) {
                    first -= 1;
                }
                (Verdict::Converged, Some(first))
            } else {
                (Verdict::Active, None)
            };
            RoleConvergence {
                role: s.role,
                verdict,
                converged_at,
                converged_at_tokens_b: converged_at.map(|i| s.points[i].to_tokens_b),
                stage_means: stage_means(&s.points),
            }
        })
        .collect()
}

fn stage_means(points: &[DistancePoint]) -> Vec<StageMean> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for p in points {
        match out.iter_mut().find(|(stage, ..)| *stage == p.stage) {
            Some(entry) => {
                entry.1 += p.normalized;
                entry.2 += 1;
            }
            None => out.push((p.stage.clone(), p.normalized, 1)),
        }
    }
    out.into_iter()
        .map(|(stage, sum, n)| StageMean {
            stage,
            mean_normalized: sum / n as f64,
            points: n,
        })
        .collect()
}

/// CSV with columns `role,from_tokens_b,to_tokens_b,raw,normalized`.
pub fn series_to_csv(series: &[DistanceSeries]) -> String {
    let mut out = String::from("role,from_tokens_b,to_tokens_b,raw,normalized\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(out, "{},{},{},{},{}", s.role, p.from_tokens_b, p.to_tokens_b, p.raw, p.normalized);
        }
    }
    out
}
