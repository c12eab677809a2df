//! `trainscope` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! input data is missing or invalid. Diagnostics go to stderr; machine output
//! goes to stdout or to `--out`.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trainscope::checkpoint_io::{MappingConfig, NonFinitePolicy, ParameterRole};
use trainscope::fixtures::FixtureSpec;
use trainscope::monitor::{
    annotate_stages, detect_plateaus, detect_spikes, ingest_series, mask_spikes, plateaus_to_csv, read_boundaries, spikes_to_csv,
    AnnotatedSeries, ColumnSchema, Direction, MetricSeries, PlateauConfig, PlateauEvent, SpikeConfig, SpikeEvent,
};
use trainscope::planner::{build_training_plan, Inventory, RecipeFile};
use trainscope::report::{
    render_layer_curves, render_line_chart, slug, write_report_bundle, ChartSeries, ChartStyle, InputDigest,
    NamedChart, ReportBundle, Table,
};
use trainscope::run::{discover_run, scan_run};
use trainscope::trajectory::{
    convergence_summary, cross_role_mean, distance_series, series_to_csv, CrossRolePoint, DistanceSeries,
    FrechetMode, RoleConvergence,
};
use trainscope::weight_stats::{build_trajectory_set, CheckpointStats, Metric, TrajectorySet};

use config::{FileConfig, MetricName, ModeName, DEFAULT_CONVERGENCE_WINDOW, DEFAULT_EPSILON};

#[derive(Parser)]
#[command(name = "trainscope", version, about = "Training-state telemetry for pretraining runs")]
struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-tensor statistics of every checkpoint in a run directory (JSON).
    Scan {
        dir: PathBuf,
        #[command(flatten)]
        scan: ScanArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Normalized Fréchet distances between successive checkpoints plus a
    /// convergence summary (JSON).
    Frechet {
        dir: PathBuf,
        #[command(flatten)]
        scan: ScanArgs,
        #[command(flatten)]
        traj: TrajArgs,
        /// Also write the distance series as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Spike and plateau report for a loss or eval-score series (JSON).
    Loss {
        file: PathBuf,
        #[command(flatten)]
        series: SeriesArgs,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Staged training plan from a recipe and a source inventory (JSON manifest).
    Plan {
        recipe: PathBuf,
        inventory: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Report bundle (SVG charts, CSV tables, index.json) for run
    /// directories and series files.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "trainscope report")]
        title: String,
        #[command(flatten)]
        scan: ScanArgs,
        #[command(flatten)]
        traj: TrajArgs,
        #[command(flatten)]
        series: SeriesArgs,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Synthetic checkpoints and loss curves. Without SPEC, generates the
    /// default 4-layer, 6-checkpoint run and three loss curves.
    Fixtures {
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScanArgs {
    /// JSON mapping rules `{"rules": [{"pattern", "role"}], "strict"}`.
    #[arg(long, value_name = "FILE")]
    mapping: Option<PathBuf>,
    /// Reject unmapped tensors and incomplete layers.
    #[arg(long)]
    strict: bool,
    /// Skip non-finite elements instead of failing.
    #[arg(long)]
    lenient_non_finite: bool,
    /// Checkpoints scanned concurrently.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TrajArgs {
    #[arg(long, value_enum)]
    metric: Option<MetricName>,
    #[arg(long, value_enum)]
    frechet_mode: Option<ModeName>,
    /// Layer-axis scale for planar mode.
    #[arg(long)]
    layer_scale: Option<f64>,
    /// Convergence threshold on normalized distance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Trailing distance points that must stay below epsilon.
    #[arg(long = "conv-window", value_name = "N")]
    conv_window: Option<usize>,
}

#[derive(Args)]
struct SeriesArgs {
    /// Token column / key of the series.
    #[arg(long, default_value = "tokens_b")]
    tokens_column: String,
    /// Value column / key; defaults to `value` or the only other column.
    #[arg(long)]
    value_column: Option<String>,
    /// Treat higher values as better (eval scores).
    #[arg(long)]
    higher_better: bool,
    /// JSON list of `{stage, start_tokens_b}`.
    #[arg(long, value_name = "FILE")]
    boundaries: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Points in the spike baseline window.
    #[arg(long)]
    window: Option<usize>,
    /// Robust z-score threshold for spikes.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    mad_floor: Option<f64>,
    /// Plateau window width in B tokens.
    #[arg(long)]
    plateau_window: Option<f64>,
    /// Plateau slope threshold per B tokens.
    #[arg(long)]
    slope_eps: Option<f64>,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn data(e: anyhow::Error) -> Failure {
    Failure::Data(e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(path) => FileConfig::read(path).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Scan { dir, scan, out } => {
            let stats = scan_dir(&dir, &scan, &file)?;
            emit(out.as_deref(), &to_json(&ScanOutput { checkpoints: &stats }))
        }
        Command::Frechet {
            dir,
            scan,
            traj,
            csv,
            out,
        } => {
            let stats = scan_dir(&dir, &scan, &file)?;
            let analysis = analyze(stats, &scan, &traj, &file)?;
            if let Some(path) = csv {
                write_file(&path, &series_to_csv(&analysis.series))?;
            }
            emit(out.as_deref(), &to_json(&analysis.output()))
        }
        Command::Loss {
            file: input,
            series,
            detect,
            out,
        } => {
            let report = loss_report(&input, &series, &detect, &file)?;
            emit(out.as_deref(), &to_json(&report))
        }
        Command::Plan { recipe, inventory, out } => plan(&recipe, &inventory, out.as_deref()),
        Command::Report {
            inputs,
            title,
            scan,
            traj,
            series,
            detect,
            out,
        } => report(&inputs, title, &scan, &traj, &series, &detect, &file, &out),
        Command::Fixtures { spec, out } => {
            let spec = match spec {
                Some(path) => FixtureSpec::read(&path)?,
                None => FixtureSpec::default(),
            };
            let files = spec.generate(&out)?;
            let mut listing = String::new();
            for f in files {
                listing.push_str(&f.display().to_string());
                listing.push('\n');
            }
            emit(None, &listing)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ScanOutput<'a> {
    checkpoints: &'a [CheckpointStats],
}

fn mapping(scan: &ScanArgs, file: &FileConfig) -> Result<MappingConfig, Failure> {
    let cfg = match scan.mapping.as_ref().or(file.mapping.as_ref()) {
        Some(path) => MappingConfig::from_json_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => MappingConfig::default(),
    };
    let strict = scan.strict || file.strict.unwrap_or(false) || cfg.strict;
    Ok(cfg.with_strict(strict))
}

fn scan_dir(dir: &Path, scan: &ScanArgs, file: &FileConfig) -> Result<Vec<CheckpointStats>, Failure> {
    let cfg = mapping(scan, file)?;
    let jobs = match scan.jobs.or(file.jobs) {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let policy = if scan.lenient_non_finite || file.lenient_non_finite.unwrap_or(false) {
        NonFinitePolicy::Lenient
    } else {
        NonFinitePolicy::Strict
    };
    let entries = discover_run(dir)?;
    if entries.is_empty() {
        return Err(data(anyhow::anyhow!("{}: no checkpoints with sidecars found", dir.display())));
    }
    let stats = scan_run(&entries, &cfg, policy, jobs)?;
    for s in &stats {
        for w in &s.warnings {
            eprintln!("warning: {}: {w}", s.checkpoint_id);
        }
        if s.dropped_non_finite > 0 {
            eprintln!("warning: {}: skipped {} non-finite elements", s.checkpoint_id, s.dropped_non_finite);
        }
    }
    Ok(stats)
}

struct Analysis {
    mode: FrechetMode,
    epsilon: f64,
    window: usize,
    set: TrajectorySet,
    series: Vec<DistanceSeries>,
    mean: Vec<CrossRolePoint>,
    convergence: Vec<RoleConvergence>,
}

#[derive(Serialize)]
struct FrechetOutput<'a> {
    metric: Metric,
    frechet_mode: FrechetMode,
    epsilon: f64,
    window: usize,
    series: &'a [DistanceSeries],
    cross_role_mean: &'a [CrossRolePoint],
    convergence: &'a [RoleConvergence],
}

impl Analysis {
    fn output(&self) -> FrechetOutput<'_> {
        FrechetOutput {
            metric: self.set.metric,
            frechet_mode: self.mode,
            epsilon: self.epsilon,
            window: self.window,
            series: &self.series,
            cross_role_mean: &self.mean,
            convergence: &self.convergence,
        }
    }
}

fn analyze(stats: Vec<CheckpointStats>, scan: &ScanArgs, traj: &TrajArgs, file: &FileConfig) -> Result<Analysis, Failure> {
    let metric: Metric = traj.metric.or(file.metric).unwrap_or_default().into();
    let mode = file
        .frechet_mode(traj.frechet_mode, traj.layer_scale)
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let epsilon = traj.epsilon.or(file.convergence.epsilon).unwrap_or(DEFAULT_EPSILON);
    let window = traj
        .conv_window
        .or(file.convergence.window)
        .unwrap_or(DEFAULT_CONVERGENCE_WINDOW);
    if !(epsilon.is_finite() && epsilon > 0.0) || window == 0 {
        return Err(Failure::Usage("--epsilon must be > 0 and --conv-window >= 1".into()));
    }
    let strict = scan.strict || file.strict.unwrap_or(false);
    let set = build_trajectory_set(stats, metric, strict)?;
    let series = distance_series(&set, mode)?;
    let mean = cross_role_mean(&series);
    let convergence = convergence_summary(&series, epsilon, window);
    Ok(Analysis {
        mode,
        epsilon,
        window,
        set,
        series,
        mean,
        convergence,
    })
}

#[derive(Serialize)]
struct LossReport {
    name: String,
    points: usize,
    spike_config: SpikeConfig,
    plateau_config: PlateauConfig,
    spikes: Vec<SpikeEvent>,
    plateaus: Vec<PlateauEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stages: Option<AnnotatedSeries>,
    #[serde(skip)]
    series: Option<MetricSeries>,
}

fn read_series(path: &Path, args: &SeriesArgs) -> Result<MetricSeries, Failure> {
    let schema = ColumnSchema {
        tokens: args.tokens_column.clone(),
        value: args.value_column.clone(),
        ..ColumnSchema::default()
    };
    let direction = if args.higher_better { Direction::HigherBetter } else { Direction::LowerBetter };
    Ok(ingest_series(path, &schema, direction)?)
}

fn loss_report(path: &Path, args: &SeriesArgs, detect: &DetectArgs, file: &FileConfig) -> Result<LossReport, Failure> {
    let series = read_series(path, args)?;
    let spike_config = file.spike_config(detect.window, detect.threshold, detect.mad_floor);
    let plateau_config = file.plateau_config(detect.plateau_window, detect.slope_eps);
    let spikes = detect_spikes(&series, &spike_config).with_context(|| path.display().to_string()).map_err(data)?;
    let plateaus = detect_plateaus(&mask_spikes(&series, &spikes), &plateau_config)
        .with_context(|| path.display().to_string())
        .map_err(data)?;
    let boundaries = match &args.boundaries {
        Some(p) => read_boundaries(p)?,
        None => Vec::new(),
    };
    let stages = if boundaries.is_empty() { None } else { Some(annotate_stages(&series, &boundaries)?) };
    Ok(LossReport {
        name: series.name.clone(),
        points: series.len(),
        spike_config,
        plateau_config,
        spikes,
        plateaus,
        stages,
        series: Some(series),
    })
}

fn plan(recipe: &Path, inventory: &Path, out: Option<&Path>) -> CmdResult {
    let recipe = RecipeFile::read(recipe)?;
    let inventory = Inventory::from_json_file(inventory)?;
    let schedule = recipe.schedule_or_default();
    let policy = recipe.policy.clone().unwrap_or_default();
    let plan = build_training_plan(&recipe.stages, &inventory, &schedule, &policy)?;
    for d in &plan.diagnostics {
        eprintln!("{d}");
    }
    emit(out, &plan.manifest_json())
}

#[allow(clippy::too_many_arguments)]
fn report(
    inputs: &[PathBuf],
    title: String,
    scan: &ScanArgs,
    traj: &TrajArgs,
    series_args: &SeriesArgs,
    detect: &DetectArgs,
    file: &FileConfig,
    out: &Path,
) -> CmdResult {
    let mut bundle = ReportBundle {
        title,
        ..ReportBundle::default()
    };
    let boundaries = match &series_args.boundaries {
        Some(p) => {
            bundle.provenance.push(InputDigest::of_file(p)?);
            read_boundaries(p)?
        }
        None => Vec::new(),
    };
    for input in inputs {
        let stem = slug(
            &input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| input.display().to_string()),
        );
        if input.is_dir() {
            for entry in discover_run(input)? {
                bundle.provenance.push(InputDigest::of_file(&entry.container)?);
                bundle.provenance.push(InputDigest::of_file(&entry.sidecar)?);
            }
            let stats = scan_dir(input, scan, file)?;
            let a = analyze(stats, scan, traj, file)?;
            let chart: Vec<ChartSeries> = a.series.iter().map(ChartSeries::from).collect();
            let style = ChartStyle::new(format!("{stem}: normalized distance per 1B tokens"), "distance / B tokens");
            bundle.series_charts.push(NamedChart {
                name: format!("{stem}-distance"),
                svg: render_line_chart(&chart, &boundaries, &style)?,
            });
            let roles: Vec<ParameterRole> = a.set.any_roles();
            for role in roles {
                bundle.layer_charts.push(NamedChart {
                    name: format!("{stem}-layers-{role}"),
                    svg: render_layer_curves(&a.set, role, &[])?,
                });
            }
            bundle.tables.push(Table {
                name: format!("{stem}-distance"),
                csv: series_to_csv(&a.series),
            });
            bundle.tables.push(Table {
                name: format!("{stem}-convergence"),
                csv: convergence_csv(&a.convergence),
            });
        } else {
            bundle.provenance.push(InputDigest::of_file(input)?);
            let r = loss_report(input, series_args, detect, file)?;
            let series = r.series.as_ref().expect("loss report keeps its series");
            let style = ChartStyle::new(stem.clone(), "value");
            bundle.series_charts.push(NamedChart {
                name: format!("{stem}-series"),
                svg: render_line_chart(&[ChartSeries::from(series)], &boundaries, &style)?,
            });
            bundle.tables.push(Table {
                name: format!("{stem}-spikes"),
                csv: spikes_to_csv(&r.spikes),
            });
            bundle.tables.push(Table {
                name: format!("{stem}-plateaus"),
                csv: plateaus_to_csv(&r.plateaus),
            });
        }
    }
    let index = write_report_bundle(&bundle, out)?;
    for f in &index.files {
        eprintln!("wrote {}", out.join(&f.path).display());
    }
    Ok(())
}

fn convergence_csv(rows: &[RoleConvergence]) -> String {
    let mut out = String::from("role,verdict,converged_at_tokens_b\n");
    for r in rows {
        let verdict = serde_json::to_value(r.verdict).expect("verdict serializes");
        let at = r.converged_at_tokens_b.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.role, verdict.as_str().unwrap_or_default(), at));
    }
    out
}
