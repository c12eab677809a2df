//! Synthetic checkpoints and loss curves with known ground truth.
//!
//! Converging runs scale a fixed seeded base sample (mean 0, std 1) per
//! (layer, role) to the exact target std of each checkpoint, so measured
//! statistics equal their targets up to rounding and the per-role curves
//! contract toward their limits by the same ratio at every step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint_io::{write_container, CheckpointError, Dtype, ParameterRole, TensorData};
use crate::monitor::{stage_index, validate_boundaries, Direction, MetricSeries, SeriesPoint, StageBoundary};
use crate::weight_stats::CheckpointMeta;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("bad fixture spec: {0}")]
    BadSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = FixtureError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Std of the embedding and output-head tensors, constant across checkpoints.
pub const AUX_STD: f64 = 0.02;

/// Parameters of a synthetic converging run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub layers: usize,
    /// One checkpoint per entry, strictly increasing.
    pub tokens_schedule_b: Vec<f64>,
    /// Per-layer std at checkpoint 0 (before the role factor).
    pub std_start: Vec<f64>,
    /// Per-layer std the run converges to.
    pub std_limit: Vec<f64>,
    /// Remaining distance to the limit is multiplied by this each checkpoint.
    pub contraction: f64,
    /// Matrices are `hidden x hidden`, norm weights `hidden`.
    pub hidden: usize,
    pub seed: u64,
    pub dtype: Dtype,
    /// Stage labels for the sidecars.
    pub stages: Vec<StageBoundary>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self::with_layers(4)
    }
}

impl RunSpec {
    /// Default geometry with `layers` layers. The start-to-limit gap grows
    /// with depth, so the deepest layer sets every successive curve distance.
    pub fn with_layers(layers: usize) -> Self {
        RunSpec {
            layers,
            tokens_schedule_b: (1..=6).map(|i| 100.0 * i as f64).collect(),
            std_start: (0..layers).map(|k| 0.02 + 0.004 * k as f64).collect(),
            std_limit: (0..layers).map(|k| 0.019 + 0.002 * k as f64).collect(),
            contraction: 0.5,
            hidden: 64,
            seed: 0x5EED,
            dtype: Dtype::F64,
            stages: vec![
                StageBoundary { stage: "stage-1".into(), start_tokens_b: 0.0 },
                StageBoundary { stage: "stage-2".into(), start_tokens_b: 250.0 },
                StageBoundary { stage: "stage-3".into(), start_tokens_b: 450.0 },
            ],
        }
    }

    pub fn checkpoints(&self) -> usize {
        self.tokens_schedule_b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FixtureError::BadSpec(m));
        if self.layers == 0 || self.hidden < 2 {
            return bad(format!("need layers >= 1 and hidden >= 2, got {} and {}", self.layers, self.hidden));
        }
        if self.tokens_schedule_b.is_empty() {
            return bad("empty token schedule".into());
        }
        if self.tokens_schedule_b.iter().any(|t| !t.is_finite() || *t < 0.0)
            || self.tokens_schedule_b.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("token schedule must be finite, >= 0 and strictly increasing".into());
        }
        if self.std_start.len() != self.layers || self.std_limit.len() != self.layers {
            return bad(format!(
                "std_start and std_limit need {} entries, got {} and {}",
                self.layers,
                self.std_start.len(),
                self.std_limit.len()
            ));
        }
        if self.std_start.iter().chain(&self.std_limit).any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("stds must be finite and positive".into());
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return bad(format!("contraction must be in (0, 1), got {}", self.contraction));
        }
        validate_boundaries(&self.stages).map_err(|e| FixtureError::BadSpec(e.to_string()))
    }

    /// Multiplier applied to every layer's std for `role`, so roles differ.
    pub fn role_factor(role: ParameterRole) -> f64 {
        let i = ParameterRole::MONITORED.iter().position(|r| *r == role).unwrap_or(0);
        1.0 + 0.05 * i as f64
    }

    /// Target std of (`layer`, `role`) at checkpoint `i`.
    pub fn target_std(&self, i: usize, layer: usize, role: ParameterRole) -> f64 {
        let (s, l) = (self.std_start[layer], self.std_limit[layer]);
        Self::role_factor(role) * (l + (s - l) * self.contraction.powi(i as i32))
    }

    pub fn checkpoint_id(i: usize) -> String {
        format!("ckpt-{i:03}")
    }

    pub fn stage_of(&self, tokens_b: f64) -> &str {
        &self.stages[stage_index(&self.stages, tokens_b)].stage
    }
}

/// Tensor name for a monitored role in per-projection layout.
pub fn tensor_name(layer: usize, role: ParameterRole) -> String {
    let suffix = match role {
        ParameterRole::AttnQ => "self_attn.q_proj",
        ParameterRole::AttnK => "self_attn.k_proj",
        ParameterRole::AttnV => "self_attn.v_proj",
        ParameterRole::AttnO => "self_attn.o_proj",
        ParameterRole::MlpGate => "mlp.gate_proj",
        ParameterRole::MlpUp => "mlp.up_proj",
        ParameterRole::MlpDown => "mlp.down_proj",
        ParameterRole::NormInput => "input_layernorm",
        ParameterRole::NormPost => "post_attention_layernorm",
        ParameterRole::QkvFused | ParameterRole::Other => "extra",
    };
    format!("model.layers.{layer}.{suffix}.weight")
}

/// `n` seeded uniform draws shifted and scaled to mean 0 and std 1.
fn base_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let std = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    v.iter_mut().for_each(|x| *x /= std);
    v
}

struct BaseTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    /// `None` for tensors with a constant std.
    slot: Option<(usize, ParameterRole)>,
}

fn base_tensors(spec: &RunSpec) -> Vec<BaseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.hidden;
    let mut out = Vec::with_capacity(spec.layers * 9 + 2);
    out.push(BaseTensor {
        name: "model.embed_tokens.weight".into(),
        shape: vec![h, h],
        values: base_sample(&mut rng, h * h),
        slot: None,
    });
    for layer in 0..spec.layers {
        for role in ParameterRole::MONITORED {
            let shape = if role.is_norm() { vec![h] } else { vec![h, h] };
            let n = shape.iter().product();
            out.push(BaseTensor {
                name: tensor_name(layer, role),
                shape,
                values: base_sample(&mut rng, n),
                slot: Some((layer, role)),
            });
        }
    }
    out.push(BaseTensor {
        name: "lm_head.weight".into(),
        shape: vec![h, h],
        values: base_sample(&mut rng, h * h),
        slot: None,
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCheckpoint {
    pub container: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes one container plus a `<stem>.json` sidecar per checkpoint into `dir`.
pub fn gen_converging_run(spec: &RunSpec, dir: impl AsRef<Path>) -> Result<Vec<GeneratedCheckpoint>> {
    spec.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let base = base_tensors(spec);
    let mut written = Vec::with_capacity(spec.checkpoints());
    let mut scaled = Vec::new();
    for (i, &tokens_b) in spec.tokens_schedule_b.iter().enumerate() {
        let meta = CheckpointMeta {
            checkpoint_id: RunSpec::checkpoint_id(i),
            tokens_b,
            stage: spec.stage_of(tokens_b).to_string(),
        };
        let tensors: Vec<TensorData> = base
            .iter()
            .map(|t| {
                let sigma = match t.slot {
                    Some((layer, role)) => spec.target_std(i, layer, role),
                    None => AUX_STD,
                };
                scaled.clear();
                scaled.extend(t.values.iter().map(|z| sigma * z));
                TensorData::from_values(t.name.clone(), spec.dtype, t.shape.clone(), &scaled)
            })
            .collect();
        let metadata = BTreeMap::from([
            ("checkpoint_id".to_string(), meta.checkpoint_id.clone()),
            ("stage".to_string(), meta.stage.clone()),
            ("tokens_b".to_string(), tokens_b.to_string()),
        ]);
        let container = dir.join(format!("{}.safetensors", meta.checkpoint_id));
        write_container(&container, &tensors, &metadata)?;
        let sidecar = dir.join(format!("{}.json", meta.checkpoint_id));
        std::fs::write(&sidecar, meta.to_json()).map_err(io_err(&sidecar))?;
        written.push(GeneratedCheckpoint { container, sidecar });
    }
    Ok(written)
}

/// Shape family of a synthetic loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SmoothDecay,
    /// Adds `height` to the points at these indices.
    WithSpikes { positions: Vec<usize>, height: f64 },
    /// Linear decline, a flat segment over `[plateau_start_b, plateau_end_b]`,
    /// then a steep drop of `drop` over `drop_span_b` and a slow decline.
    PlateauThenDrop {
        plateau_start_b: f64,
        plateau_end_b: f64,
        drop: f64,
        drop_span_b: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurveSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LossKind,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_step")]
    pub step_b: f64,
    /// Half-width of the uniform noise added to every point.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_points() -> usize {
    600
}
fn default_step() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.005
}

impl LossCurveSpec {
    pub fn new(name: impl Into<String>, kind: LossKind) -> Self {
        LossCurveSpec {
            name: name.into(),
            kind,
            points: default_points(),
            step_b: default_step(),
            noise: default_noise(),
            seed: 0,
        }
    }

    pub fn smooth_decay() -> Self {
        Self::new("smooth_decay", LossKind::SmoothDecay)
    }

    pub fn with_spikes() -> Self {
        Self::new(
            "with_spikes",
            LossKind::WithSpikes {
                positions: vec![120, 340],
                height: 1.5,
            },
        )
    }

    pub fn plateau_then_drop() -> Self {
        Self::new(
            "plateau_then_drop",
            LossKind::PlateauThenDrop {
                plateau_start_b: 200.0,
                plateau_end_b: 300.0,
                drop: 0.4,
                drop_span_b: 20.0,
            },
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FixtureError::BadSpec(m));
        if self.points < 2 || !(self.step_b.is_finite() && self.step_b > 0.0) {
            return bad(format!("need points >= 2 and step_b > 0, got {} and {}", self.points, self.step_b));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        let end_b = (self.points - 1) as f64 * self.step_b;
        match &self.kind {
            LossKind::SmoothDecay => Ok(()),
            LossKind::WithSpikes { positions, height } => {
                if !(height.is_finite() && *height > 0.0) {
                    return bad(format!("spike height must be > 0, got {height}"));
                }
                if positions.iter().any(|&p| p >= self.points) {
                    return bad(format!("spike positions must be < {}", self.points));
                }
                if positions.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("spike positions must be strictly increasing".into());
                }
                Ok(())
            }
            LossKind::PlateauThenDrop {
                plateau_start_b,
                plateau_end_b,
                drop,
                drop_span_b,
            } => {
                if !(*plateau_start_b > 0.0 && plateau_end_b > plateau_start_b && plateau_end_b + drop_span_b < end_b) {
                    return bad(format!(
                        "need 0 < plateau_start < plateau_end and plateau_end + drop_span < {end_b}"
                    ));
                }
                if !(*drop > 0.0 && *drop_span_b > 0.0) {
                    return bad("drop and drop_span_b must be > 0".into());
                }
                Ok(())
            }
        }
    }
}

const DECLINE_PER_B: f64 = 0.008;
const TAIL_DECLINE_PER_B: f64 = 0.002;

/// Noise-free curve value at `t` billion tokens.
fn clean_loss(kind: &LossKind, t: f64) -> f64 {
    match kind {
        LossKind::SmoothDecay | LossKind::WithSpikes { .. } => 2.2 + 1.8 * (-t / 150.0).exp() - TAIL_DECLINE_PER_B * t,
        LossKind::PlateauThenDrop {
            plateau_start_b,
            plateau_end_b,
            drop,
            drop_span_b,
        } => {
            let level = 4.0 - DECLINE_PER_B * plateau_start_b;
            if t < *plateau_start_b {
                4.0 - DECLINE_PER_B * t
            } else if t <= *plateau_end_b {
                level
            } else if t <= plateau_end_b + drop_span_b {
                level - drop * (t - plateau_end_b) / drop_span_b
            } else {
                level - drop - TAIL_DECLINE_PER_B * (t - plateau_end_b - drop_span_b)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeTruth {
    pub index: usize,
    pub tokens_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauTruth {
    pub start_b: f64,
    pub end_b: f64,
}

/// Events built into a synthetic loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTruth {
    pub name: String,
    pub spikes: Vec<SpikeTruth>,
    pub plateaus: Vec<PlateauTruth>,
}

/// Builds the curve in memory: tokens `i * step_b`, seeded uniform noise.
pub fn loss_curve(spec: &LossCurveSpec) -> Result<(MetricSeries, LossTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points: Vec<SeriesPoint> = (0..spec.points)
        .map(|i| {
            let t = i as f64 * spec.step_b;
            let noise = spec.noise * (rng.gen::<f64>() * 2.0 - 1.0);
            SeriesPoint {
                tokens_b: t,
                value: clean_loss(&spec.kind, t) + noise,
            }
        })
        .collect();
    let mut truth = LossTruth {
        name: spec.name.clone(),
        spikes: vec![],
        plateaus: vec![],
    };
    match &spec.kind {
        LossKind::SmoothDecay => {}
        LossKind::WithSpikes { positions, height } => {
            for &i in positions {
                points[i].value += height;
                truth.spikes.push(SpikeTruth {
                    index: i,
                    tokens_b: points[i].tokens_b,
                });
            }
        }
        LossKind::PlateauThenDrop {
            plateau_start_b,
            plateau_end_b,
            ..
        } => truth.plateaus.push(PlateauTruth {
            start_b: *plateau_start_b,
            end_b: *plateau_end_b,
        }),
    }
    let series = MetricSeries::new(spec.name.clone(), Direction::LowerBetter, points)
        .map_err(|e| FixtureError::BadSpec(e.to_string()))?;
    Ok((series, truth))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCurve {
    pub series: PathBuf,
    pub truth: PathBuf,
}

/// Writes `<name>.jsonl` and the ground truth `<name>.truth.json` into `dir`.
pub fn gen_loss_curve(spec: &LossCurveSpec, dir: impl AsRef<Path>) -> Result<GeneratedCurve> {
    let (series, truth) = loss_curve(spec)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let series_path = dir.join(format!("{}.jsonl", spec.name));
    std::fs::write(&series_path, series.to_jsonl()).map_err(io_err(&series_path))?;
    let truth_path = dir.join(format!("{}.truth.json", spec.name));
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
    std::fs::write(&truth_path, text).map_err(io_err(&truth_path))?;
    Ok(GeneratedCurve {
        series: series_path,
        truth: truth_path,
    })
}

/// Everything a `fixtures` invocation can generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub loss_curves: Vec<LossCurveSpec>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            run: Some(RunSpec::default()),
            loss_curves: vec![
                LossCurveSpec::smooth_decay(),
                LossCurveSpec::with_spikes(),
                LossCurveSpec::plateau_then_drop(),
            ],
        }
    }
}

impl FixtureSpec {
    /// Reads TOML (by extension) or JSON.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
            _ => serde_json::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|e| FixtureError::BadSpec(format!("{}: {e}", path.display())))
    }

    /// Writes the run into `dir/run` and the curves into `dir/loss`.
    pub fn generate(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        if let Some(run) = &self.run {
            for g in gen_converging_run(run, dir.join("run"))? {
                files.push(g.container);
                files.push(g.sidecar);
            }
        }
        for curve in &self.loss_curves {
            let g = gen_loss_curve(curve, dir.join("loss"))?;
            files.push(g.series);
            files.push(g.truth);
        }
        Ok(files)
    }
}
