//! Deterministic report output: SVG line charts, CSV tables and an
//! `index.json` with SHA-256 digests of every written file and input.
//!
//! Charts use a fixed 960x540 canvas. All numbers are printed with at most
//! six significant digits, and nothing depends on time or locale, so the
//! same input always yields the same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint_io::ParameterRole;
use crate::monitor::{MetricSeries, StageBoundary};
use crate::trajectory::DistanceSeries;
use crate::weight_stats::TrajectorySet;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to plot: {0}")]
    EmptyInput(String),
    #[error("series {series:?} holds a non-finite point")]
    NonFinite { series: String },
    #[error("role {0} is not present in the trajectory set")]
    RoleAbsent(ParameterRole),
    #[error("no checkpoint with id {0:?}")]
    UnknownCheckpoint(String),
    #[error("two report files would be named {0:?}")]
    DuplicateName(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

pub const WIDTH: u32 = 960;
pub const HEIGHT: u32 = 540;

/// Background colors of stage bands, assigned by stage order.
pub const STAGE_PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
];

/// Line colors, assigned by series order.
pub const SERIES_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const LEFT: f64 = 80.0;
const RIGHT: f64 = 760.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 480.0;
const TICKS: usize = 5;

/// Formats `v` with at most six significant digits, without trailing zeros,
/// switching to exponent notation outside `[1e-4, 1e6)`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, mantissa.parse::<f64>().unwrap() * 10f64.powi(exp));
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// One line of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl From<&MetricSeries> for ChartSeries {
    fn from(s: &MetricSeries) -> Self {
        ChartSeries {
            label: s.name.clone(),
            points: s.points.iter().map(|p| (p.tokens_b, p.value)).collect(),
        }
    }
}

/// Each distance is plotted at the later checkpoint of its pair.
impl From<&DistanceSeries> for ChartSeries {
    fn from(s: &DistanceSeries) -> Self {
        ChartSeries {
            label: s.role.to_string(),
            points: s.points.iter().map(|p| (p.to_tokens_b, p.normalized)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl ChartStyle {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>) -> Self {
        ChartStyle {
            title: title.into(),
            x_label: "tokens (B)".into(),
            y_label: y_label.into(),
        }
    }
}

struct Band<'a> {
    label: &'a str,
    from: f64,
    to: f64,
    color: &'static str,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn render(series: &[ChartSeries], bands: &[Band], style: &ChartStyle, integer_x: bool) -> Result<String> {
    if series.is_empty() {
        return Err(ReportError::EmptyInput("no series".into()));
    }
    for s in series {
        if s.points.is_empty() {
            return Err(ReportError::EmptyInput(format!("series {:?} has no points", s.label)));
        }
        if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(ReportError::NonFinite { series: s.label.clone() });
        }
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = range(all().map(|p| p.0));
    let (y_lo, y_hi) = {
        let (lo, hi) = range(all().map(|p| p.1));
        let pad = 0.05 * (hi - lo);
        // Non-negative data keeps a zero floor.
        let floor = if lo >= 0.0 { (lo - pad).max(0.0) } else { lo - pad };
        (floor, hi + pad)
    };
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (RIGHT - LEFT);
    let py = |y: f64| BOTTOM - (y - y_lo) / (y_hi - y_lo) * (BOTTOM - TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        fmt_num((LEFT + RIGHT) / 2.0),
        escape(&style.title)
    );

    for band in bands {
        let (a, b) = (band.from.max(x_lo), band.to.min(x_hi));
        if b <= a {
            continue;
        }
        let _ = writeln!(
            svg,
            r#"<rect class="stage" x="{}" y="{}" width="{}" height="{}" fill="{}" fill-opacity="0.15"/>"#,
            fmt_num(px(a)),
            fmt_num(TOP),
            fmt_num(px(b) - px(a)),
            fmt_num(BOTTOM - TOP),
            band.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{}">{}</text>"#,
            fmt_num(px(a) + 4.0),
            fmt_num(TOP + 12.0),
            band.color,
            escape(band.label)
        );
    }

    let _ = writeln!(
        svg,
        r##"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="#333333"/>"##,
        l = fmt_num(LEFT),
        t = fmt_num(TOP),
        b = fmt_num(BOTTOM),
        r = fmt_num(RIGHT)
    );
    let mut x_ticks: Vec<f64> = if integer_x && x_hi - x_lo <= 12.0 {
        (x_lo.ceil() as i64..=x_hi.floor() as i64).map(|k| k as f64).collect()
    } else {
        (0..TICKS)
            .map(|k| x_lo + k as f64 / (TICKS - 1) as f64 * (x_hi - x_lo))
            .map(|x| if integer_x { x.round() } else { x })
            .collect()
    };
    x_ticks.dedup();
    for x in x_ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_num(px(x)),
            fmt_num(BOTTOM + 18.0),
            fmt_num(x)
        );
    }
    for k in 0..TICKS {
        let y = y_lo + k as f64 / (TICKS - 1) as f64 * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt_num(LEFT - 6.0),
            fmt_num(py(y) + 4.0),
            fmt_num(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        fmt_num((LEFT + RIGHT) / 2.0),
        fmt_num(BOTTOM + 42.0),
        escape(&style.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{y}" text-anchor="middle" transform="rotate(-90 20 {y})">{}</text>"#,
        escape(&style.y_label),
        y = fmt_num((TOP + BOTTOM) / 2.0)
    );

    for (i, s) in series.iter().enumerate() {
        let color = SERIES_PALETTE[i % SERIES_PALETTE.len()];
        let mut points = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            if j > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{},{}", fmt_num(px(x)), fmt_num(py(y)));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>"#
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            fmt_num(RIGHT + 16.0),
            fmt_num(RIGHT + 36.0),
            ly = fmt_num(ly)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            fmt_num(RIGHT + 42.0),
            fmt_num(ly + 4.0),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Token-axis line chart with one polyline per series and one background
/// band per stage.
pub fn render_line_chart(series: &[ChartSeries], boundaries: &[StageBoundary], style: &ChartStyle) -> Result<String> {
    let x_hi = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let bands: Vec<Band> = boundaries
        .iter()
        .enumerate()
        .map(|(k, b)| Band {
            label: &b.stage,
            from: b.start_tokens_b,
            to: boundaries.get(k + 1).map_or(x_hi, |n| n.start_tokens_b),
            color: STAGE_PALETTE[k % STAGE_PALETTE.len()],
        })
        .collect();
    render(series, &bands, style, false)
}

/// Std (or rms) against layer index for `role`, one polyline per checkpoint
/// in token order. An empty `checkpoint_ids` selects every checkpoint.
pub fn render_layer_curves(set: &TrajectorySet, role: ParameterRole, checkpoint_ids: &[String]) -> Result<String> {
    if !set.any_roles().contains(&role) {
        return Err(ReportError::RoleAbsent(role));
    }
    for id in checkpoint_ids {
        if set.checkpoint(id).is_none() {
            return Err(ReportError::UnknownCheckpoint(id.clone()));
        }
    }
    let mut series = Vec::new();
    for ckpt in &set.checkpoints {
        if !checkpoint_ids.is_empty() && !checkpoint_ids.contains(&ckpt.checkpoint_id) {
            continue;
        }
        let Some(t) = set.trajectory(&ckpt.checkpoint_id, role) else {
            continue;
        };
        series.push(ChartSeries {
            label: format!("{} B", fmt_num(ckpt.tokens_b)),
            points: t.points.iter().map(|p| (p.layer as f64, p.value)).collect(),
        });
    }
    if series.is_empty() {
        return Err(ReportError::RoleAbsent(role));
    }
    let metric = match set.metric {
        crate::weight_stats::Metric::Std => "std",
        crate::weight_stats::Metric::Rms => "rms",
    };
    let style = ChartStyle {
        title: format!("{role} {metric} by layer"),
        x_label: "layer".into(),
        y_label: metric.into(),
    };
    render(&series, &[], &style, true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedChart {
    pub name: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub title: String,
    pub series_charts: Vec<NamedChart>,
    pub layer_charts: Vec<NamedChart>,
    pub tables: Vec<Table>,
    pub provenance: Vec<InputDigest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    SeriesChart,
    LayerChart,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrittenFile {
    pub kind: FileKind,
    /// Relative to the bundle directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub title: String,
    pub files: Vec<WrittenFile>,
    pub inputs: Vec<InputDigest>,
}

/// Lowercase ASCII alphanumerics, everything else collapsed to `-`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_matches('-');
    if trimmed.is_empty() {
        "unnamed".into()
    } else {
        trimmed.to_string()
    }
}

/// Writes one `.svg` per chart, one `.csv` per table and `index.json` into
/// `dir`, returning the index.
pub fn write_report_bundle(bundle: &ReportBundle, dir: impl AsRef<Path>) -> Result<ReportIndex> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    let mut planned: Vec<(FileKind, String, &str)> = Vec::new();
    for c in &bundle.series_charts {
        planned.push((FileKind::SeriesChart, format!("{}.svg", slug(&c.name)), &c.svg));
    }
    for c in &bundle.layer_charts {
        planned.push((FileKind::LayerChart, format!("{}.svg", slug(&c.name)), &c.svg));
    }
    for t in &bundle.tables {
        planned.push((FileKind::Table, format!("{}.csv", slug(&t.name)), &t.csv));
    }
    let mut names: Vec<&str> = planned.iter().map(|p| p.1.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(ReportError::DuplicateName(w[0].to_string()));
    }
    if names.contains(&"index.json") {
        return Err(ReportError::DuplicateName("index.json".into()));
    }

    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::with_capacity(planned.len());
    for (kind, name, body) in planned {
        let path = dir.join(&name);
        std::fs::write(&path, body).map_err(io(&path))?;
        files.push(WrittenFile {
            kind,
            path: name,
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let index = ReportIndex {
        title: bundle.title.clone(),
        files,
        inputs: bundle.provenance.clone(),
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> Vec<ChartSeries> {
        vec![ChartSeries {
            label: "loss".into(),
            points: vec![(0.0, 3.0), (10.0, 2.0)],
        }]
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(123.456789), "123.457");
        assert_eq!(fmt_num(-0.5), "-0.5");
        assert_eq!(fmt_num(0.000123456789), "0.000123457");
        assert_eq!(fmt_num(1.5e-5), "1.5e-5");
        assert_eq!(fmt_num(8.25e-5), "8.25e-5");
        assert_eq!(fmt_num(1234567.0), "1.23457e6");
        assert_eq!(fmt_num(999999.7), "1e6");
        assert_eq!(fmt_num(1874.0), "1874");
    }

    #[test]
    fn one_polyline_per_series() {
        let svg = render_line_chart(&two_points(), &[], &ChartStyle::new("t", "loss")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 2);
        assert!(svg.contains(r#"viewBox="0 0 960 540""#));
        assert_eq!(svg, render_line_chart(&two_points(), &[], &ChartStyle::new("t", "loss")).unwrap());
    }

    #[test]
    fn stage_bands() {
        let b = vec![
            StageBoundary { stage: "a".into(), start_tokens_b: 0.0 },
            StageBoundary { stage: "b<c".into(), start_tokens_b: 5.0 },
        ];
        let svg = render_line_chart(&two_points(), &b, &ChartStyle::new("t", "loss")).unwrap();
        assert_eq!(svg.matches(r#"class="stage""#).count(), 2);
        assert!(svg.contains(STAGE_PALETTE[0]) && svg.contains(STAGE_PALETTE[1]));
        assert!(svg.contains("b&lt;c"));
    }

    #[test]
    fn empty_inputs() {
        let style = ChartStyle::new("t", "y");
        assert!(matches!(render_line_chart(&[], &[], &style), Err(ReportError::EmptyInput(_))));
        let empty = vec![ChartSeries { label: "e".into(), points: vec![] }];
        assert!(matches!(render_line_chart(&empty, &[], &style), Err(ReportError::EmptyInput(_))));
        let nan = vec![ChartSeries { label: "n".into(), points: vec![(0.0, f64::NAN)] }];
        assert!(matches!(render_line_chart(&nan, &[], &style), Err(ReportError::NonFinite { .. })));
    }

    #[test]
    fn single_point_is_drawable() {
        let one = vec![ChartSeries { label: "p".into(), points: vec![(3.0, 0.0)] }];
        let svg = render_line_chart(&one, &[], &ChartStyle::new("t", "y")).unwrap();
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn bundle_files() {
        let dir = tempfile::tempdir().unwrap();
        let svg = render_line_chart(&two_points(), &[], &ChartStyle::new("t", "loss")).unwrap();
        let bundle = ReportBundle {
            title: "demo".into(),
            series_charts: vec![
                NamedChart { name: "Loss A".into(), svg: svg.clone() },
                NamedChart { name: "loss b".into(), svg },
            ],
            ..Default::default()
        };
        let index = write_report_bundle(&bundle, dir.path()).unwrap();
        let mut listed: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        listed.sort();
        assert_eq!(listed, ["index.json", "loss-a.svg", "loss-b.svg"]);
        assert_eq!(index.files.len(), 2);
        let on_disk: ReportIndex =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
        assert_eq!(on_disk, index);
        assert_eq!(index.files[0].sha256, sha256_hex(&std::fs::read(dir.path().join("loss-a.svg")).unwrap()));

        let empty = tempfile::tempdir().unwrap();
        write_report_bundle(&ReportBundle::default(), empty.path()).unwrap();
        assert_eq!(std::fs::read_dir(empty.path()).unwrap().count(), 1);

        let clash = ReportBundle {
            tables: vec![
                Table { name: "x y".into(), csv: String::new() },
                Table { name: "x-y".into(), csv: String::new() },
            ],
            ..Default::default()
        };
        assert!(matches!(write_report_bundle(&clash, dir.path()), Err(ReportError::DuplicateName(_))));
    }

    #[test]
    fn digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
