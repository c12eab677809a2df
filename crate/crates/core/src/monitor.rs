//! Loss and downstream-score series: ingestion, spike and plateau
//! detection, and data-stage annotation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    ParseError { row: usize, reason: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("spike window must be >= 5, got {0}")]
    WindowTooSmall(usize),
    #[error("spike window {window} must be smaller than the series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid detector parameter: {0}")]
    BadParam(String),
    #[error("series spans {span} B tokens, shorter than the {window_b} B plateau window")]
    SpanTooShort { span: f64, window_b: f64 },
    #[error("stage boundaries must start at 0 and strictly increase: {0}")]
    UnsortedBoundaries(String),
}

pub type Result<T, E = MonitorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    LowerBetter,
    HigherBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub tokens_b: f64,
    pub value: f64,
}

/// A (tokens, value) time series. Points are sorted by tokens and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub direction: Direction,
    pub points: Vec<SeriesPoint>,
}

impl MetricSeries {
    /// Sorts the points and drops exact duplicates. Non-finite points are
    /// rejected with their position in `points`.
    pub fn new(name: impl Into<String>, direction: Direction, mut points: Vec<SeriesPoint>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.tokens_b.is_finite() || !p.value.is_finite()) {
            return Err(MonitorError::ParseError {
                row: i + 1,
                reason: "non-finite value".into(),
            });
        }
        points.sort_by(|a, b| a.tokens_b.total_cmp(&b.tokens_b).then(a.value.total_cmp(&b.value)));
        points.dedup();
        Ok(MetricSeries {
            name: name.into(),
            direction,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes the series as JSON lines `{"tokens_b":..,"value":..}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{}", serde_json::json!({"tokens_b": p.tokens_b, "value": p.value}));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeriesFormat {
    /// By extension (`.csv` vs `.jsonl`/`.ndjson`/`.json`), else by content.
    #[default]
    Auto,
    Csv,
    JsonLines,
}

/// Which columns (CSV header names or JSON keys) hold the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub tokens: String,
    /// `None` takes `value` when present, else the only other column.
    pub value: Option<String>,
    pub format: SeriesFormat,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            tokens: "tokens_b".into(),
            value: None,
            format: SeriesFormat::Auto,
        }
    }
}

fn resolve_value_column(schema: &ColumnSchema, columns: &[String]) -> Result<String> {
    if let Some(v) = &schema.value {
        return if columns.contains(v) {
            Ok(v.clone())
        } else {
            Err(MonitorError::MissingColumn(v.clone()))
        };
    }
    if columns.iter().any(|c| c == "value") {
        return Ok("value".into());
    }
    let others: Vec<&String> = columns.iter().filter(|c| **c != schema.tokens).collect();
    match others.as_slice() {
        [only] => Ok((*only).clone()),
        _ => Err(MonitorError::MissingColumn("value".into())),
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| MonitorError::ParseError {
        row,
        reason: format!("column {column:?}: {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MonitorError::ParseError {
            row,
            reason: format!("column {column:?}: non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

/// Reads a series from CSV (with header) or JSON lines. Row numbers in
/// errors are 1-based data rows.
pub fn ingest_series(path: impl AsRef<Path>, schema: &ColumnSchema, direction: Direction) -> Result<MetricSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MonitorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let format = match schema.format {
        SeriesFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => SeriesFormat::Csv,
            Some("jsonl" | "ndjson" | "json") => SeriesFormat::JsonLines,
            _ if text.trim_start().starts_with('{') => SeriesFormat::JsonLines,
            _ => SeriesFormat::Csv,
        },
        f => f,
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series")
        .to_string();
    parse_series(&text, format, schema, name, direction)
}

pub fn parse_series(
    text: &str,
    format: SeriesFormat,
    schema: &ColumnSchema,
    name: String,
    direction: Direction,
) -> Result<MetricSeries> {
    let points = match format {
        SeriesFormat::JsonLines => parse_jsonl(text, schema)?,
        _ => parse_csv(text, schema)?,
    };
    if points.is_empty() {
        return Err(MonitorError::EmptySeries);
    }
    MetricSeries::new(name, direction, points)
}

fn parse_csv(text: &str, schema: &ColumnSchema) -> Result<Vec<SeriesPoint>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| MonitorError::ParseError { row: 0, reason: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let tokens_idx = header
        .iter()
        .position(|c| *c == schema.tokens)
        .ok_or_else(|| MonitorError::MissingColumn(schema.tokens.clone()))?;
    let value_col = resolve_value_column(schema, &header)?;
    let value_idx = header.iter().position(|c| *c == value_col).expect("resolved column exists");
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| MonitorError::ParseError { row, reason: e.to_string() })?;
        let field = |idx: usize, col: &str| {
            record.get(idx).ok_or_else(|| MonitorError::ParseError {
                row,
                reason: format!("missing field {col:?}"),
            })
        };
        points.push(SeriesPoint {
            tokens_b: parse_number(field(tokens_idx, &schema.tokens)?, row, &schema.tokens)?,
            value: parse_number(field(value_idx, &value_col)?, row, &value_col)?,
        });
    }
    Ok(points)
}

fn parse_jsonl(text: &str, schema: &ColumnSchema) -> Result<Vec<SeriesPoint>> {
    let mut points = Vec::new();
    let mut value_col: Option<String> = None;
    for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate().map(|(i, l)| (i + 1, l)) {
        let obj: serde_json::Map<String, Value> = serde_json::from_str(line).map_err(|e| MonitorError::ParseError {
            row,
            reason: e.to_string(),
        })?;
        let col = match &value_col {
            Some(c) => c.clone(),
            None => {
                let keys: Vec<String> = obj.keys().cloned().collect();
                if !keys.contains(&schema.tokens) {
                    return Err(MonitorError::MissingColumn(schema.tokens.clone()));
                }
                let c = resolve_value_column(schema, &keys)?;
                value_col = Some(c.clone());
                c
            }
        };
        let get = |key: &str| -> Result<f64> {
            match obj.get(key) {
                Some(Value::Number(n)) => n.as_f64().ok_or_else(|| MonitorError::ParseError {
                    row,
                    reason: format!("{key:?} is out of range"),
                }),
                Some(Value::String(s)) => parse_number(s, row, key),
                Some(other) => Err(MonitorError::ParseError {
                    row,
                    reason: format!("{key:?} is not a number: {other}"),
                }),
                None => Err(MonitorError::ParseError {
                    row,
                    reason: format!("missing key {key:?}"),
                }),
            }
        };
        points.push(SeriesPoint {
            tokens_b: get(&schema.tokens)?,
            value: get(&col)?,
        });
    }
    Ok(points)
}

/// MAD-to-sigma factor for normally distributed data.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeConfig {
    /// Number of preceding points forming the baseline.
    pub window: usize,
    /// Robust z-score above which a point is a spike.
    pub threshold: f64,
    /// Lower bound on the MAD, used when a window is (nearly) constant.
    pub mad_floor: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        SpikeConfig {
            window: 50,
            threshold: 6.0,
            mad_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub index: usize,
    pub tokens_b: f64,
    pub value: f64,
    /// Median of the preceding window.
    pub baseline: f64,
    /// Robust z-score in the adverse direction.
    pub score: f64,
}

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Flags points whose adverse deviation from the rolling median of the
/// previous `window` points exceeds `threshold` robust standard deviations
/// (`MAD_SCALE * max(MAD, mad_floor)`). The first `window` points are never
/// flagged.
pub fn detect_spikes(series: &MetricSeries, cfg: &SpikeConfig) -> Result<Vec<SpikeEvent>> {
    if cfg.window < 5 {
        return Err(MonitorError::WindowTooSmall(cfg.window));
    }
    if cfg.window >= series.len() {
        return Err(MonitorError::WindowTooLarge {
            window: cfg.window,
            len: series.len(),
        });
    }
    if !(cfg.threshold.is_finite() && cfg.threshold > 0.0) || !(cfg.mad_floor.is_finite() && cfg.mad_floor > 0.0) {
        return Err(MonitorError::BadParam(format!(
            "threshold {} and mad_floor {} must be finite and positive",
            cfg.threshold, cfg.mad_floor
        )));
    }
    let values: Vec<f64> = series.points.iter().map(|p| p.value).collect();
    let mut scratch = vec![0.0; cfg.window];
    let mut events = Vec::new();
    for i in cfg.window..values.len() {
        scratch.copy_from_slice(&values[i - cfg.window..i]);
        let baseline = median_in_place(&mut scratch);
        for v in scratch.iter_mut() {
            *v = (*v - baseline).abs();
        }
        let mad = median_in_place(&mut scratch).max(cfg.mad_floor);
        let deviation = match series.direction {
            Direction::LowerBetter => values[i] - baseline,
            Direction::HigherBetter => baseline - values[i],
        };
        let score = deviation / (MAD_SCALE * mad);
        if score > cfg.threshold {
            events.push(SpikeEvent {
                index: i,
                tokens_b: series.points[i].tokens_b,
                value: values[i],
                baseline,
                score,
            });
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    /// Width of each least-squares window in billions of tokens.
    pub window_b: f64,
    /// Windows with |slope| below this (value per B tokens) count as flat.
    pub slope_eps: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            window_b: 20.0,
            slope_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauEvent {
    pub window_start_b: f64,
    pub window_end_b: f64,
    /// Mean of the member windows' least-squares slopes.
    pub slope_per_b: f64,
    pub windows: usize,
}

/// Ordinary least-squares slope of `points`; `None` with fewer than two
/// distinct token positions.
pub fn ols_slope(points: &[SeriesPoint]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.tokens_b).sum::<f64>() / n;
    let my = points.iter().map(|p| p.value).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points {
        let dx = p.tokens_b - mx;
        sxy += dx * (p.value - my);
        sxx += dx * dx;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slides token windows of width `window_b` across the series (anchored at
/// every point, forwards and backwards), fits a least-squares line to each
/// and merges overlapping flat windows into maximal events.
pub fn detect_plateaus(series: &MetricSeries, cfg: &PlateauConfig) -> Result<Vec<PlateauEvent>> {
    if !(cfg.window_b.is_finite() && cfg.window_b > 0.0) || !(cfg.slope_eps.is_finite() && cfg.slope_eps > 0.0) {
        return Err(MonitorError::BadParam(format!(
            "window_b {} and slope_eps {} must be finite and positive",
            cfg.window_b, cfg.slope_eps
        )));
    }
    let pts = &series.points;
    let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
        return Err(MonitorError::EmptySeries);
    };
    let (t0, t1) = (first.tokens_b, last.tokens_b);
    if t1 - t0 < cfg.window_b {
        return Err(MonitorError::SpanTooShort {
            span: t1 - t0,
            window_b: cfg.window_b,
        });
    }

    let mut bounds: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if p.tokens_b + cfg.window_b <= t1 {
            bounds.push((p.tokens_b, p.tokens_b + cfg.window_b));
        }
        if p.tokens_b - cfg.window_b >= t0 {
            bounds.push((p.tokens_b - cfg.window_b, p.tokens_b));
        }
    }
    bounds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    bounds.dedup();

    let mut flat: Vec<(f64, f64, f64)> = Vec::new();
    for (lo, hi) in bounds {
        let start = pts.partition_point(|p| p.tokens_b < lo);
        let end = pts.partition_point(|p| p.tokens_b <= hi);
        if let Some(slope) = ols_slope(&pts[start..end]) {
            if slope.abs() < cfg.slope_eps {
                flat.push((lo, hi, slope));
            }
        }
    }

    let mut events: Vec<PlateauEvent> = Vec::new();
    let mut slope_sum = 0.0;
    for (lo, hi, slope) in flat {
        match events.last_mut() {
            Some(ev) if lo <= ev.window_end_b => {
                ev.window_end_b = ev.window_end_b.max(hi);
                ev.windows += 1;
                slope_sum += slope;
                ev.slope_per_b = slope_sum / ev.windows as f64;
            }
            _ => {
                slope_sum = slope;
                events.push(PlateauEvent {
                    window_start_b: lo,
                    window_end_b: hi,
                    slope_per_b: slope,
                    windows: 1,
                });
            }
        }
    }
    Ok(events)
}

/// Copy of `series` without the points flagged in `spikes`. A spike inside
/// a plateau window tilts its least-squares slope, so plateau detection
/// downstream of spike detection runs on the masked series.
pub fn mask_spikes(series: &MetricSeries, spikes: &[SpikeEvent]) -> MetricSeries {
    let mut drop: Vec<usize> = spikes.iter().map(|e| e.index).collect();
    drop.sort_unstable();
    let points = series
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| drop.binary_search(i).is_err())
        .map(|(_, p)| *p)
        .collect();
    MetricSeries {
        name: series.name.clone(),
        direction: series.direction,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBoundary {
    pub stage: String,
    pub start_tokens_b: f64,
}

pub fn validate_boundaries(boundaries: &[StageBoundary]) -> Result<()> {
    let Some(first) = boundaries.first() else {
        return Err(MonitorError::UnsortedBoundaries("no boundaries given".into()));
    };
    if first.start_tokens_b != 0.0 {
        return Err(MonitorError::UnsortedBoundaries(format!(
            "first stage {} starts at {}, not 0",
            first.stage, first.start_tokens_b
        )));
    }
    for pair in boundaries.windows(2) {
        if !(pair[1].start_tokens_b > pair[0].start_tokens_b) {
            return Err(MonitorError::UnsortedBoundaries(format!(
                "{}@{} does not follow {}@{}",
                pair[1].stage, pair[1].start_tokens_b, pair[0].stage, pair[0].start_tokens_b
            )));
        }
    }
    Ok(())
}

pub fn read_boundaries(path: impl AsRef<Path>) -> Result<Vec<StageBoundary>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MonitorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let boundaries: Vec<StageBoundary> =
        serde_json::from_str(&text).map_err(|e| MonitorError::ParseError { row: 0, reason: e.to_string() })?;
    validate_boundaries(&boundaries)?;
    Ok(boundaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub tokens_b: f64,
    pub value: f64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSeries {
    pub name: String,
    pub points: Vec<AnnotatedPoint>,
    /// Stages holding at least one point, in boundary order.
    pub summaries: Vec<StageSummary>,
}

/// Index of the stage whose half-open interval `[start, next_start)` holds
/// `tokens_b`. Points before the first boundary belong to the first stage.
pub fn stage_index(boundaries: &[StageBoundary], tokens_b: f64) -> usize {
    boundaries
        .partition_point(|b| b.start_tokens_b <= tokens_b)
        .saturating_sub(1)
}

pub fn annotate_stages(series: &MetricSeries, boundaries: &[StageBoundary]) -> Result<AnnotatedSeries> {
    validate_boundaries(boundaries)?;
    let mut acc: Vec<Option<StageSummary>> = vec![None; boundaries.len()];
    let mut points = Vec::with_capacity(series.len());
    for p in &series.points {
        let k = stage_index(boundaries, p.tokens_b);
        let stage = &boundaries[k].stage;
        points.push(AnnotatedPoint {
            tokens_b: p.tokens_b,
            value: p.value,
            stage: stage.clone(),
        });
        let s = acc[k].get_or_insert_with(|| StageSummary {
            stage: stage.clone(),
            count: 0,
            mean: 0.0,
            min: f64::INFINITY,
            last: p.value,
        });
        s.count += 1;
        s.mean += p.value;
        s.min = s.min.min(p.value);
        s.last = p.value;
    }
    let summaries = acc
        .into_iter()
        .flatten()
        .map(|mut s| {
            s.mean /= s.count as f64;
            s
        })
        .collect();
    Ok(AnnotatedSeries {
        name: series.name.clone(),
        points,
        summaries,
    })
}

pub fn spikes_to_csv(events: &[SpikeEvent]) -> String {
    let mut out = String::from("index,tokens_b,value,baseline,score\n");
    for e in events {
        let _ = writeln!(out, "{},{},{},{},{}", e.index, e.tokens_b, e.value, e.baseline, e.score);
    }
    out
}

pub fn plateaus_to_csv(events: &[PlateauEvent]) -> String {
    let mut out = String::from("window_start_b,window_end_b,slope_per_b,windows\n");
    for e in events {
        let _ = writeln!(out, "{},{},{},{}", e.window_start_b, e.window_end_b, e.slope_per_b, e.windows);
    }
    out
}
